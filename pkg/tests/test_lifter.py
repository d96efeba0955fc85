from pathlib import Path

import pytest

from txlift import fixtures
from txlift.cefg import build_cefg
from txlift.errors import LiftTimeout, UnboundValue
from txlift.expr import CallResult, Const, Env, Op, PairedValue, evaluate
from txlift.ingest import RecordedStep, parse_trace
from txlift.hexutil import checksum
from txlift.lifter import AbiArg, Lifter, calls_of, infer_types, is_boilerplate, lift_function, walk
from txlift.render import render_const, render_pseudocode
from txlift.scope import build_call_graph, extract_instructions, localize_scope
from txlift.selectors import SelectorDB
from txlift.synthetic import TraceBuilder, encode_call

GOLDEN = Path(__file__).parent / "golden"
USER = "0x00000000000000000000000000000000000a11ce"
A0 = "0xa0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0"


def run_program(program):
    b = TraceBuilder(sender=USER, to=A0, input=encode_call("f()"))
    b.deploy(A0, program)
    stream = parse_trace(b.run().to_native())
    cefg = build_cefg(stream)
    scope = localize_scope(build_call_graph(cefg), A0)
    (ft,) = extract_instructions(scope, cefg)
    return ft


def paired_values(stmts):
    for s in walk(stmts):
        for pv in s.operands:
            if isinstance(pv, PairedValue):
                yield pv
        for a in s.info.get("args", ()):
            if a.value is not None:
                yield a.value
            yield from a.items


class StackChecking(Lifter):
    """Fails if a simulated stack word disagrees with the recorded stack top."""

    def _step(self, fr, rs, idx):
        top = rs.step.stack_top
        mine = list(reversed(fr.stack))[: len(top)]
        for k, pv in enumerate(mine):
            if pv.word is not None:
                assert pv.word == top[k], (idx, rs.step.op, k)
        super()._step(fr, rs, idx)


def test_store_then_load_resolves_to_the_constant():
    ft = run_program(lambda c: (c.push(5).push(0).op("MSTORE").push(0).op("MLOAD").op("POP"), c.stop()))
    stmts = lift_function(ft)
    kinds = [s.kind for s in stmts]
    assert kinds == ["mem_write", "assign", "return"]
    write, assign = stmts[0], stmts[1]
    assert write.info["size"] == 32 and write.operands[1].expr == Const(5)
    assert assign.operands[0] == PairedValue(Const(5), 5, assign.step)


def test_constant_branches_are_dropped():
    def program(c):
        c.push(1).push(c.label(), 3)
        c.op("JUMPI")
        c.jumpdest()
        c.stop()

    assert [s.kind for s in lift_function(run_program(program))] == ["return"]


def test_taken_branch_nests_the_rest_of_the_path():
    def program(c):
        c.op("CALLER").op("ISZERO").op("ISZERO").push(c.label(), 3).op("JUMPI")
        c.jumpdest().push(1).push(0).op("SSTORE").stop()

    (branch,) = lift_function(run_program(program))
    assert branch.kind == "if_taken" and branch.info["taken"]
    assert branch.operands[0].expr == Env("CALLER")
    assert [c.kind for c in branch.children] == ["assign", "return"]


def test_not_taken_branch_records_negated_condition():
    def program(c):
        c.op("CALLVALUE").push(c.label(), 3).op("JUMPI").stop()

    (branch,) = lift_function(run_program(program))
    assert branch.info["taken"] is False
    assert branch.operands[0].expr == Op("ISZERO", (Env("CALLVALUE"),))


def test_minimal_mode_elides_boilerplate_guards():
    assert is_boilerplate(Op("ISZERO", (Env("CALLVALUE"),)))
    assert is_boilerplate(CallResult(3))
    assert not is_boilerplate(Op("SUB", (Env("CALLER"), Const(1))))

    def program(c):
        c.guard_no_value()
        c.stop()

    assert lift_function(run_program(program), minimal=False)[0].kind == "if_taken"
    assert [s.kind for s in lift_function(run_program(program), minimal=True)] == ["return"]


def test_missing_immediate_raises_unbound_value():
    ft = run_program(lambda c: (c.push(1).op("POP"), c.stop()))
    rs = ft.bound_values[0]
    ft.bound_values[0] = RecordedStep(rs.step, rs.category, ())
    with pytest.raises(UnboundValue):
        lift_function(ft)


def test_zero_budget_times_out(webkey_traces):
    with pytest.raises(LiftTimeout):
        lift_function(webkey_traces[1], budget=0.0)


@pytest.mark.parametrize("minimal,name", [(True, "webkey_entry_minimal.txt"), (False, "webkey_entry_full.txt")])
def test_entry_function_matches_golden(webkey_traces, minimal, name):
    text = render_pseudocode(lift_function(webkey_traces[0], minimal=minimal))
    assert text + "\n" == (GOLDEN / name).read_text()
    assert "MEM[" not in text


def test_callback_lifts_every_round(webkey_traces):
    stmts = lift_function(webkey_traces[1], minimal=True)
    names = [s.info["signature"].name for s in calls_of(stmts) if s.info.get("signature")]
    assert names.count("buy") == fixtures.ROUNDS
    assert names.count("swapExactTokensForTokensSupportingFeeOnTransferTokens") == fixtures.ROUNDS
    swap = next(s for s in calls_of(stmts) if s.info["signature"].name.startswith("swap"))
    path = swap.info["args"][2]
    assert path.type == "address[]" and [pv.word for pv in path.items] == [
        int(fixtures.WKEY, 16), int(fixtures.USDT, 16)]


def test_unknown_selector_falls_back_to_func_name(traces_of):
    _, traces = traces_of(fixtures.callbacks(2))
    text = render_pseudocode(lift_function(traces[0], selectors=SelectorDB()))
    assert "func_46e5c437(uint256)" in text


@pytest.mark.parametrize("seed", range(12))
def test_concrete_bindings_agree_with_expressions(traces_of, seed):
    _, traces = traces_of(fixtures.random_trace(seed))
    for ft in traces:
        stmts = StackChecking().lift(ft)
        for pv in paired_values(stmts):
            v = evaluate(pv.expr)
            if v is not None and pv.word is not None:
                assert v == pv.word


def test_webkey_stack_agrees_with_trace(webkey_traces):
    for ft in webkey_traces:
        StackChecking(minimal=True).lift(ft)


def test_infer_types_recognizes_dynamic_bytes():
    data = encode_call("x(uint256,bytes)", 7, 64, 32, 0xAB)
    assert infer_types(data) == ("uint256", "bytes")
    assert infer_types(encode_call("y(address)", int(A0, 16))) == ("address",)


def test_constant_rendering():
    assert render_const(1200 * 10**18) == "1200 * 10^18"
    assert render_const(10_030_000_000_000_000_000) == "10.03 * 10^18"
    assert render_const(2**256 - 1) == "type(uint256).max"
    assert render_const(int(A0, 16)) == checksum(A0)
    assert render_const(42) == "42"


def test_abi_arg_is_hashable():
    hash(AbiArg("uint256", PairedValue(Const(1), 1)))
