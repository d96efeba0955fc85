import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from txlift.errors import RpcUnavailable, TraceUnsupported, TxNotFound
from txlift.ingest import parse_trace
from txlift.rpc import EndpointConfig, RateLimiter, cache_path, fetch_trace, limiter_for

KNOWN = "0x" + "ab" * 32
UNKNOWN = "0x" + "cd" * 32
SENDER = "0x" + "11" * 20
TARGET = "0x" + "22" * 20

TX = {"hash": KNOWN, "from": SENDER, "to": TARGET, "input": "0x", "value": "0x0", "blockNumber": "0x10",
      "chainId": "0x1"}
STRUCT_LOGS = [
    {"pc": 0, "op": "PUSH1", "depth": 1, "gas": 100, "stack": []},
    {"pc": 2, "op": "PUSH1", "depth": 1, "gas": 97, "stack": ["0x1"]},
    {"pc": 4, "op": "STOP", "depth": 1, "gas": 94, "stack": ["0x1", "0x2"]},
]


class Node(BaseHTTPRequestHandler):
    """Answers from recorded responses. ``server.mode`` selects the behavior."""

    def log_message(self, *args):
        pass

    def reply(self, status, obj):
        body = json.dumps(obj).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        req = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        srv = self.server
        srv.calls.append(req["method"])
        if srv.mode == "down":
            return self.reply(503, {"error": "unavailable"})
        if srv.mode == "flaky" and srv.failures > 0:
            srv.failures -= 1
            return self.reply(502, {})
        method, (h, *_) = req["method"], req["params"]
        ok = {"jsonrpc": "2.0", "id": req["id"]}
        if method == "eth_getTransactionByHash":
            return self.reply(200, {**ok, "result": TX if h == KNOWN else None})
        if method == "eth_getTransactionReceipt":
            return self.reply(200, {**ok, "result": {"status": "0x1", "blockNumber": "0x10"}})
        if method == "debug_traceTransaction":
            if srv.mode == "nodebug":
                return self.reply(200, {**ok, "error": {"code": -32601, "message": "the method does not exist"}})
            return self.reply(200, {**ok, "result": {"gas": 6, "failed": False, "returnValue": "",
                                                      "structLogs": STRUCT_LOGS}})
        return self.reply(200, {**ok, "error": {"code": -32601, "message": "method not found"}})


@pytest.fixture
def node():
    srv = ThreadingHTTPServer(("127.0.0.1", 0), Node)
    srv.mode, srv.calls, srv.failures = "ok", [], 0
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    srv.cfg = EndpointConfig(f"http://127.0.0.1:{srv.server_port}", "ethereum", timeout=5, retries=2,
                             rate_limit=0, backoff=0.01)
    yield srv
    srv.shutdown()
    srv.server_close()


def test_recorded_trace_parses_to_three_steps(node, tmp_path):
    raw = fetch_trace(KNOWN, node.cfg, tmp_path)
    stream = parse_trace(raw, "geth")
    assert len(stream.steps) == 3
    assert stream.sender == SENDER and stream.initial_recipient == TARGET and stream.block_number == 16
    assert stream.tx_hash == KNOWN and stream.chain == "ethereum"
    assert cache_path(tmp_path, "ethereum", KNOWN).read_bytes() == raw


def test_cache_makes_reruns_offline(node, tmp_path):
    first = fetch_trace(KNOWN, node.cfg, tmp_path)
    n = len(node.calls)
    node.mode = "down"
    assert fetch_trace(KNOWN, node.cfg, tmp_path) == first
    assert len(node.calls) == n


def test_unknown_hash(node):
    with pytest.raises(TxNotFound):
        fetch_trace(UNKNOWN, node.cfg)
    with pytest.raises(TxNotFound):
        fetch_trace("0x1234", node.cfg)


def test_node_without_debug_api(node):
    node.mode = "nodebug"
    with pytest.raises(TraceUnsupported):
        fetch_trace(KNOWN, node.cfg)


def test_transient_errors_are_retried(node):
    node.mode, node.failures = "flaky", 2
    assert len(parse_trace(fetch_trace(KNOWN, node.cfg), "geth").steps) == 3


def test_retries_are_bounded(node):
    node.mode = "down"
    with pytest.raises(RpcUnavailable):
        fetch_trace(KNOWN, node.cfg)
    assert len(node.calls) == node.cfg.retries + 1


def test_unreachable_endpoint():
    cfg = EndpointConfig("http://127.0.0.1:9", retries=1, rate_limit=0, backoff=0.01, timeout=1)
    with pytest.raises(RpcUnavailable):
        fetch_trace(KNOWN, cfg)


def test_config_invariants():
    with pytest.raises(ValueError):
        EndpointConfig("http://x", timeout=0)
    with pytest.raises(ValueError):
        EndpointConfig("http://x", retries=-1)


def test_limiter_is_shared_per_endpoint():
    a, b = EndpointConfig("http://shared.test", rate_limit=5), EndpointConfig("http://shared.test", timeout=3)
    assert limiter_for(a) is limiter_for(b)
    assert limiter_for(EndpointConfig("http://other.test")) is not limiter_for(a)


def test_rate_limiter_spaces_requests():
    lim = RateLimiter(50)
    start = time.monotonic()
    threads = [threading.Thread(target=lim.wait) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert time.monotonic() - start >= 5 / 50 - 0.01
