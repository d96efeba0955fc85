import json
import time

import pytest

from txlift import fixtures, opcodes as ops
from txlift.cefg import Block, CefgNode, aggregate, build_cefg
from txlift.fixtures import A0, ATTACK_CONTRACT, DVM, DVM_IMPL
from txlift.ingest import parse_trace

RANDOM_SEEDS = range(24)


def _stream(fx):
    return parse_trace(fx.native())


def _node(key_input="0x00", start=0, end=1, depth=1):
    return CefgNode(depth=depth, address="0x" + "aa" * 20, call_type="CALL", input_digest=key_input,
                    input_len=0, storage_address="0x" + "aa" * 20, ins=[Block(0, start, end)], frames=[start])


def test_single_context():
    g = build_cefg(_stream(fixtures.no_calls()))
    assert len(g.nodes) == 1
    assert g.call_edges() == []


def test_empty_stream():
    g = build_cefg(parse_trace(json.dumps({"structLogs": []}), format="geth"))
    assert g.nodes == {} and g.root is None


def test_root_context_reentry_shape(webkey_cefg):
    g = webkey_cefg
    ops_seq = [e.op for e in g.edges[:4]]
    assert ops_seq == ["STATICCALL", "DELEGATECALL", "RETURN", "RETURN"]
    root = g.nodes[g.root]
    # the root context is entered again after the static call returns and stays one node
    assert root.address == ATTACK_CONTRACT and len(root.frames) == 1
    assert len(root.ins) >= 2
    assert root.ins[0].end <= g.edges[0].step + 1 and root.ins[1].start == g.edges[3].step + 1
    static_node = g.nodes[g.edges[0].dst]
    impl_node = g.nodes[g.edges[1].dst]
    assert (static_node.address, static_node.call_type, static_node.ins) == (DVM, "STATICCALL", [])
    # the delegatecall below a static call is static as well
    assert (impl_node.address, impl_node.call_type, impl_node.ins) == (DVM_IMPL, "DELEGATECALL", [])
    assert impl_node.static


def test_aggregate_same_key_concatenates_in_step_order():
    merged = aggregate([_node(start=10, end=12), _node(start=0, end=3)])
    assert len(merged) == 1
    assert [(b.start, b.end) for b in merged[0].ins] == [(0, 3), (10, 12)]


def test_aggregate_keeps_distinct_inputs_apart():
    assert len(aggregate([_node("0x01"), _node("0x02")])) == 2


def test_callback_contexts_aggregate():
    fx = fixtures.callbacks()
    stream = _stream(fx)
    g = build_cefg(stream)
    entries = [f for f in stream.frames if stream.steps[f.first_step].step.code_address == A0 and f.depth == 3]
    (node,) = [n for n in g.nodes.values() if n.address == A0 and n.depth == 3]
    assert len(entries) == fixtures.ROUNDS == 67
    assert len(node.ins) == len(entries)
    assert len(node.frames) == len(entries)


def _check_invariants(stream, g):
    static_frames = set()
    for f in stream.frames:
        entry = stream.steps[f.entry_step].step.op if f.entry_step is not None else "CALL"
        if entry == "STATICCALL" or (f.parent in static_frames):
            static_frames.add(f.id)
    covered = sorted(i for n in g.nodes.values() for b in n.ins for i in b.indices())
    expected = [i for i, s in enumerate(stream.steps) if s.step.frame not in static_frames]
    assert covered == expected, "lossless partition"
    keys = [n.key for n in aggregate(list(g.nodes.values()))]
    assert keys == list(g.nodes), "aggregation idempotence"
    for n in g.nodes.values():
        if n.call_type == "STATICCALL":
            assert n.ins == []
    depth = 1
    for e in g.edges:
        assert stream.steps[e.step].step.op == e.op or e.op == "REVERT"
        depth += 1 if e.op in ops.CONTEXT_SWITCH_OPS else -1
        if e.step + 1 < len(stream.steps):
            assert stream.steps[e.step + 1].step.depth == depth


@pytest.mark.parametrize("seed", RANDOM_SEEDS)
def test_invariants_on_random_traces(seed):
    stream = _stream(fixtures.random_trace(seed))
    _check_invariants(stream, build_cefg(stream))


def test_invariants_on_named_fixtures(webkey_stream, webkey_cefg):
    _check_invariants(webkey_stream, webkey_cefg)
    for fx in (fixtures.create2_delegate(), fixtures.flash_swap(), fixtures.flash_swap("origin")):
        stream = _stream(fx)
        _check_invariants(stream, build_cefg(stream))


def test_reverted_nodes_are_flagged():
    stream = _stream(fixtures.flash_swap("origin"))
    g = build_cefg(stream)
    assert all(n.reverted for n in g.nodes.values())
    assert all(b.reverted for n in g.nodes.values() for b in n.ins)


def test_deterministic(webkey_stream, webkey_cefg):
    assert build_cefg(webkey_stream).to_json() == webkey_cefg.to_json()


def test_json_dump(webkey_cefg):
    doc = json.loads(webkey_cefg.dumps())
    assert doc["root"] and len(doc["nodes"]) == len(webkey_cefg.nodes)
    assert {e["op"] for e in doc["edges"]} <= {"CALL", "STATICCALL", "DELEGATECALL", "RETURN", "STOP", "REVERT"}


def test_build_is_fast(webkey_stream):
    t = time.perf_counter()
    build_cefg(webkey_stream)
    assert time.perf_counter() - t < 1.0
