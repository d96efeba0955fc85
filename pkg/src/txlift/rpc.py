"""JSON-RPC front end: fetch a transaction and its struct-log trace from a node.

The result is the ``geth`` trace format understood by :func:`txlift.ingest.parse_trace`,
with the transaction metadata attached under ``tx``. Responses are cached on disk
keyed by chain and hash, so a second run needs no network access.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import httpx

from .errors import RpcUnavailable, TraceUnsupported, TxNotFound

log = logging.getLogger(__name__)

METHOD_NOT_FOUND = -32601
TRACER_OPTIONS = {"enableMemory": True, "disableStack": False, "disableStorage": True, "enableReturnData": True}
_HASH = re.compile(r"^0x[0-9a-fA-F]{64}$")
_UNSUPPORTED = ("method not found", "does not exist", "not available", "not supported", "unsupported")


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    chain: str = "ethereum"
    timeout: float = 60.0
    retries: int = 3
    rate_limit: float = 10.0  # requests per second, 0 for unlimited
    backoff: float = 0.5

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.retries < 0:
            raise ValueError("retries must be non-negative")
        if self.rate_limit < 0:
            raise ValueError("rate_limit must be non-negative")


class RateLimiter:
    """Spaces requests at least ``1 / rate`` seconds apart across threads."""

    def __init__(self, rate: float):
        self.interval = 1.0 / rate if rate > 0 else 0.0
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = time.monotonic()
            slot = max(now, self._next)
            self._next = slot + self.interval
        if slot > now:
            time.sleep(slot - now)


_limiters: dict[str, RateLimiter] = {}
_limiters_lock = threading.Lock()


def limiter_for(cfg: EndpointConfig) -> RateLimiter:
    """The limiter shared by every client of ``cfg.url``."""
    with _limiters_lock:
        if cfg.url not in _limiters:
            _limiters[cfg.url] = RateLimiter(cfg.rate_limit)
        return _limiters[cfg.url]


class RpcClient:
    def __init__(self, cfg: EndpointConfig, transport: httpx.BaseTransport | None = None):
        self.cfg = cfg
        self.limiter = limiter_for(cfg)
        self._client = httpx.Client(timeout=cfg.timeout, transport=transport)
        self._ids = 0
        self._lock = threading.Lock()

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def call(self, method: str, params: list):
        """One JSON-RPC call with bounded retries on transport and server errors.

        JSON-RPC error objects are returned to the caller as ``{"error": ...}``
        rather than retried, since they are deterministic.
        """
        with self._lock:
            self._ids += 1
            body = {"jsonrpc": "2.0", "id": self._ids, "method": method, "params": params}
        last = "no attempt made"
        for attempt in range(self.cfg.retries + 1):
            if attempt:
                time.sleep(self.cfg.backoff * 2 ** (attempt - 1))
            self.limiter.wait()
            try:
                r = self._client.post(self.cfg.url, json=body)
            except httpx.HTTPError as e:
                last = f"{type(e).__name__}: {e}"
                log.warning("%s attempt %d failed: %s", method, attempt + 1, last)
                continue
            if r.status_code == 429 or r.status_code >= 500:
                last = f"HTTP {r.status_code}"
                log.warning("%s attempt %d failed: %s", method, attempt + 1, last)
                continue
            if r.status_code >= 400:
                raise RpcUnavailable(f"{method}: HTTP {r.status_code}: {r.text[:200]}")
            try:
                data = r.json()
            except ValueError as e:
                raise RpcUnavailable(f"{method}: response is not JSON") from e
            if not isinstance(data, dict):
                raise RpcUnavailable(f"{method}: unexpected response {str(data)[:200]}")
            if data.get("error") is not None:
                return {"error": data["error"]}
            return {"result": data.get("result")}
        raise RpcUnavailable(f"{method} failed after {self.cfg.retries + 1} attempts: {last}")

    def transaction(self, tx_hash: str) -> dict:
        out = self.call("eth_getTransactionByHash", [tx_hash])
        if "error" in out:
            raise RpcUnavailable(f"eth_getTransactionByHash: {out['error']}")
        if out["result"] is None:
            raise TxNotFound(tx_hash)
        return out["result"]

    def receipt(self, tx_hash: str) -> dict | None:
        out = self.call("eth_getTransactionReceipt", [tx_hash])
        return out.get("result")

    def trace(self, tx_hash: str) -> dict:
        out = self.call("debug_traceTransaction", [tx_hash, TRACER_OPTIONS])
        if "error" in out:
            err = out["error"] if isinstance(out["error"], dict) else {"message": str(out["error"])}
            msg = str(err.get("message", "")).lower()
            if err.get("code") == METHOD_NOT_FOUND or any(s in msg for s in _UNSUPPORTED):
                raise TraceUnsupported(f"{self.cfg.url} does not serve debug_traceTransaction")
            if "not found" in msg:
                raise TxNotFound(tx_hash)
            raise RpcUnavailable(f"debug_traceTransaction: {err}")
        if not isinstance(out["result"], dict) or "structLogs" not in out["result"]:
            raise TraceUnsupported("debug_traceTransaction did not return struct logs")
        return out["result"]


def cache_path(cache_dir: str | Path, chain: str, tx_hash: str) -> Path:
    return Path(cache_dir) / chain / f"{tx_hash.lower()}.json"


def fetch_trace(tx_hash: str, cfg: EndpointConfig, cache_dir: str | Path | None = None,
                transport: httpx.BaseTransport | None = None) -> bytes:
    """Raw ``geth``-format trace bytes for ``tx_hash``, served from cache when present."""
    if not _HASH.match(tx_hash):
        raise TxNotFound(f"not a transaction hash: {tx_hash}")
    if cache_dir is not None:
        cached = cache_path(cache_dir, cfg.chain, tx_hash)
        if cached.exists():
            return cached.read_bytes()
    with RpcClient(cfg, transport) as client:
        tx = client.transaction(tx_hash)
        receipt = client.receipt(tx_hash) or {}
        result = client.trace(tx_hash)
    header = {
        "hash": tx_hash.lower(),
        "chain": cfg.chain,
        "chainId": tx.get("chainId", "0x1"),
        "blockNumber": tx.get("blockNumber") or receipt.get("blockNumber") or "0x0",
        "from": tx.get("from"),
        "to": tx.get("to") or receipt.get("contractAddress"),
        "input": tx.get("input", "0x"),
        "value": tx.get("value", "0x0"),
    }
    raw = json.dumps({"tx": header, **result}, separators=(",", ":")).encode()
    if cache_dir is not None:
        cached.parent.mkdir(parents=True, exist_ok=True)
        tmp = cached.with_suffix(".tmp")
        tmp.write_bytes(raw)
        tmp.replace(cached)
    return raw
