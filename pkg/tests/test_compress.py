import random

import pytest
from hypothesis import given, settings, strategies as st

from txlift import fixtures
from txlift.compress import (
    ComplexDivergence,
    DeterministicVariation,
    Invariant,
    LoopRegion,
    classify,
    compress,
    compress_report,
    detect_loops,
    expand,
    expand_all,
    rendered_size,
    summarize,
)
from txlift.errors import ShapeMismatch
from txlift.expr import Const, PairedValue
from txlift.hexutil import WORD
from txlift.lifter import PseudoStmt, lift_function
from txlift.render import render_pseudocode
from txlift.synthetic import TraceBuilder, encode_call
from txlift.cefg import build_cefg
from txlift.ingest import parse_trace
from txlift.scope import build_call_graph, extract_instructions, localize_scope

USER = "0x7777c91ee49a303c17c558f92bf8d6395d2f7777"
A0 = "0xa0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0"
SINK = "0xd0d0d0d0d0d0d0d0d0d0d0d0d0d0d0d0d0d0d0d0"


def lifted(program):
    b = TraceBuilder(sender=USER, to=A0, input=encode_call("f()"))
    b.deploy(A0, program)
    stream = parse_trace(b.run().to_native())
    cefg = build_cefg(stream)
    (ft,) = extract_instructions(localize_scope(build_call_graph(cefg), A0), cefg)
    return lift_function(ft, minimal=True)


def primitive(body):
    p = len(body)
    return not any(p % d == 0 and body == body[:d] * (p // d) for d in range(1, p))


def has_adjacent_repeat(seq, min_body=2):
    n = len(seq)
    return any(
        seq[s : s + p] == seq[s + p : s + 2 * p] and primitive(seq[s : s + p])
        for p in range(min_body, n // 2 + 1)
        for s in range(0, n - 2 * p + 1)
    )


# -- detection ---------------------------------------------------------------


def test_documented_example():
    (r,) = detect_loops([1, 2, 3, 4, 2, 3, 4, 2, 3, 4, 5])
    assert (r.entry, r.exit, r.body_length, r.k) == (1, 10, 3, 3)
    assert r.bodies[0] == (2, 3, 4)


def test_increasing_sequence_has_no_loops():
    assert detect_loops(list(range(200))) == []
    assert detect_loops([]) == []


def test_single_statement_repeats_stay_inline():
    assert detect_loops([7] * 10) == []
    assert detect_loops([7] * 10, min_body=1)[0].k == 10


def test_nested_loops_are_found_innermost_first():
    inner = [1, 2] * 3
    seq = ([0] + inner + [9]) * 4
    first = detect_loops(seq)
    assert all(r.body_length == 2 and r.k == 3 for r in first)
    assert len(first) == 4


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=40))
def test_detection_agrees_with_brute_force(seq):
    regions = detect_loops(seq)
    assert bool(regions) == has_adjacent_repeat(seq)
    last = -1
    for r in regions:
        assert r.k >= 2 and r.entry >= last
        last = r.exit
        assert all(b == r.bodies[0] for b in r.bodies)
        assert primitive(list(r.bodies[0]))
        assert list(seq[r.entry : r.exit]) == [x for b in r.bodies for x in b]
        # maximal: one more period does not fit on either side
        p = r.body_length
        assert tuple(seq[r.exit : r.exit + p]) != r.bodies[0]
        assert r.entry < p or tuple(seq[r.entry - p : r.entry]) != r.bodies[0]


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6), st.integers(2, 10), st.integers(0, 5), st.integers(0, 5))
def test_planted_loop_is_recovered(body_len, k, pre, post):
    body = list(range(100, 100 + body_len))
    seq = list(range(pre)) + body * k + list(range(50, 50 + post))
    (r,) = detect_loops(seq)
    assert (r.entry, r.body_length, r.k) == (pre, body_len, k)


def test_random_unique_sequences_have_no_loops():
    rng = random.Random(7)
    for _ in range(50):
        seq = rng.sample(range(10_000), rng.randrange(0, 300))
        assert detect_loops(seq) == []


# -- templates -----------------------------------------------------------------


def test_slot_classification_examples():
    assert classify([10, 10, 10]) == Invariant(10)
    assert classify([0, 32, 64]) == DeterministicVariation(0, 32)
    assert classify([7, 3, 12]) == ComplexDivergence((7, 3, 12))
    assert classify([WORD - 1, 0, 1]) == DeterministicVariation(WORD - 1, 1)
    assert classify([b"a", b"a"]) == Invariant(b"a")
    assert classify([b"a", b"b"]) == ComplexDivergence((b"a", b"b"))


def test_expand_affine_template():
    r = LoopRegion(0, 2, 1, 2, ((0,), (32,)))
    t = summarize(r)
    assert t.slots == (DeterministicVariation(0, 32),)
    assert expand(t) == [0, 32]


def test_structural_mismatch_is_reported():
    with pytest.raises(ShapeMismatch):
        summarize(LoopRegion(0, 2, 1, 2, ((1,), ("x",))))


def stmt(pc, value, step):
    pv = PairedValue(Const(value), value, step)
    return PseudoStmt("assign", step, pc, (PairedValue(Const(0), 0, step), pv), {"target": "storage"})


roles = st.sampled_from(["inv", "affine", "table"])


@settings(max_examples=60, deadline=None)
@given(st.lists(roles, min_size=1, max_size=5), st.integers(2, 100), st.randoms(use_true_random=False))
def test_round_trip_over_random_templates(kinds, k, rng):
    gens = []
    for kind in kinds:
        if kind == "inv":
            v = rng.randrange(WORD)
            gens.append(lambda i, v=v: v)
        elif kind == "affine":
            b, s = rng.randrange(WORD), rng.randrange(1, WORD)
            gens.append(lambda i, b=b, s=s: (b + s * i) % WORD)
        else:
            table = [rng.randrange(2**64) for _ in range(k)]
            gens.append(lambda i, t=table: t[i])
    bodies = tuple(tuple(stmt(0x100 + j, g(i), 1000 * i + j) for j, g in enumerate(gens)) for i in range(k))
    region = LoopRegion(0, k * len(gens), len(gens), k, bodies)
    t = summarize(region)
    assert expand(t) == [s for b in bodies for s in b]
    assert t.k == k


# -- statement level -------------------------------------------------------------


def test_webkey_callback_folds_into_one_loop(webkey_traces):
    stmts = lift_function(webkey_traces[1], minimal=True)
    out, report = compress_report(stmts)
    (loop,) = [s for s in out if s.kind == "loop"]
    assert loop.info["count"] == fixtures.ROUNDS
    body = loop.info["template"].body(0)
    names = [s.info["signature"].name for s in body if s.info.get("signature")]
    assert names == ["buy", "balanceOf", "swapExactTokensForTokensSupportingFeeOnTransferTokens"]
    assert report.ratio >= 10
    assert expand_all(out) == stmts
    assert "for i in 0..67:" in render_pseudocode(out)


def test_divergent_values_render_as_tables():
    def program(c):
        c.prologue()
        c.loop(4, lambda c, i: c.call_fn("CALL", SINK, "transfer(address,uint256)", [int(USER, 16), lambda c: c.push(i * i + 3, 32)],
                                         check_code=False, ret_words=0))
        c.stop()

    stmts = lifted(program)
    out = compress(stmts)
    text = render_pseudocode(out)
    assert "arr1 = [3, 4, 7, 12]" in text and "arr1[i]" in text
    assert expand_all(out) == stmts
    assert compress(stmts, table_cap=3) == stmts


def test_affine_values_render_as_index_expressions():
    def program(c):
        c.prologue()
        c.loop(5, lambda c, i: c.call_fn("CALL", SINK, "transfer(address,uint256)", [int(USER, 16), lambda c: c.push(100 + 7 * i, 32)],
                                         check_code=False, ret_words=0))
        c.stop()

    text = render_pseudocode(compress(lifted(program)))
    assert "(100 + 7 * i)" in text


def test_nested_loops_render_nested():
    def program(c):
        def outer(c, i):
            c.call_fn("CALL", SINK, "sync()", [], check_code=False, ret_words=0)
            c.loop(3, lambda c, j: c.call_fn("CALL", SINK, "skim(address)", [int(USER, 16)], check_code=False,
                                             ret_words=0))

        c.prologue()
        c.loop(2, outer)
        c.stop()

    stmts = lifted(program)
    out = compress(stmts)
    text = render_pseudocode(out)
    assert text.count("for i in 0..") == 2
    assert "  for i in 0..3:" in text
    assert expand_all(out) == stmts


@pytest.mark.parametrize("seed", range(10))
def test_compression_never_grows_output(traces_of, seed):
    _, traces = traces_of(fixtures.random_trace(seed))
    for ft in traces:
        stmts = lift_function(ft, minimal=True)
        out = compress(stmts)
        before, after = rendered_size(stmts), rendered_size(out)
        assert after <= before
        if after == before:
            assert not any(s.kind == "loop" for s in out)
        assert expand_all(out) == stmts
