"""Acceptance criteria. Each test prints one PASS/FAIL line, then asserts the same verdict."""

import json
import random
import time
from collections import Counter
from pathlib import Path

import pytest

from txlift import fixtures, lifter
from txlift.analysis import analyze
from txlift.cefg import build_cefg
from txlift.cli import main
from txlift.compress import LoopRegion, compress_report, expand, summarize
from txlift.config import PipelineConfig
from txlift.expr import Const, PairedValue
from txlift.fundflow import NATIVE, TRANSFER_TOPIC, extract_fund_flow
from txlift.hexutil import WORD, ZERO_ADDRESS, selector, word
from txlift.ingest import LogEntry, TraceStream, parse_trace
from txlift.lifter import PseudoStmt, lift_function
from txlift.memory import ConcreteMemoryMap
from txlift.pipeline import run_pipeline
from txlift.provider import prompt_digest
from txlift.refine import completion_prompt
from txlift.render import render_pseudocode
from txlift.scope import build_call_graph, extract_instructions, localize_scope

import scenarios
from test_cefg import RANDOM_SEEDS, _check_invariants
from test_scope import brute_force, random_graph

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} [{name}] {detail}")
        assert ok, detail

    return emit


def test_cefg_correctness(verdict):
    streams = [parse_trace(fixtures.random_trace(s).native()) for s in RANDOM_SEEDS]
    streams.append(parse_trace(fixtures.webkey().native()))
    slowest, failures = 0.0, []
    for i, stream in enumerate(streams):
        t = time.perf_counter()
        g = build_cefg(stream)
        slowest = max(slowest, time.perf_counter() - t)
        try:
            _check_invariants(stream, g)
        except AssertionError as e:
            failures.append(f"trace {i}: {e}")
    g = build_cefg(streams[-1])
    root = g.nodes[g.root]
    # the root context before and after the static call is one node
    reentry = len(root.ins) >= 2 and root.ins[1].start == g.edges[3].step + 1 and len(root.frames) == 1
    ok = len(streams) >= 20 and not failures and reentry and slowest < 1.0
    verdict("cEFG correctness", ok, f"{len(streams)} traces, invariant failures={len(failures)}, "
                                    f"root re-entry merged={reentry}, slowest build={slowest:.3f}s (< 1s)")


def test_scope_oracle_equivalence(verdict):
    agree = 0
    for trial in range(100):
        rng = random.Random(trial)
        cg, a0 = random_graph(rng, rng.randint(1, 50))
        scope = localize_scope(cg, a0)
        agree += (scope.contracts, scope.functions) == brute_force(cg, a0)
    cg = build_call_graph(build_cefg(parse_trace(fixtures.webkey().native())))
    scope = localize_scope(cg, fixtures.ATTACK_CONTRACT)
    got = {(k[0], cg.nodes[k].selector) for k in scope.functions}
    want = {(fixtures.ATTACK_CONTRACT, selector(fixtures.WHEEAAPPP)),
            (fixtures.ATTACK_CONTRACT, selector(fixtures.CALLBACK))}
    verdict("scope oracle equivalence", agree == 100 and got == want,
            f"{agree}/100 trials agree with brute force, webkey scope exact={got == want}")


class NonOverlappingMemory(ConcreteMemoryMap):
    writes = 0

    def _insert(self, seg):
        out = super()._insert(seg)
        NonOverlappingMemory.writes += 1
        for a, b in zip(self.segments, self.segments[1:]):
            assert a.end <= b.start, f"segments {a.start}:{a.end} and {b.start}:{b.end} overlap"
        return out


def test_dual_decompiler_golden(verdict, monkeypatch):
    monkeypatch.setattr(lifter, "ConcreteMemoryMap", NonOverlappingMemory)
    stream = parse_trace(fixtures.webkey().native())
    cefg = build_cefg(stream)
    entry = extract_instructions(localize_scope(build_call_graph(cefg), stream.initial_recipient), cefg)[0]
    first = render_pseudocode(lift_function(entry, minimal=True))
    second = render_pseudocode(lift_function(entry, minimal=True))
    golden = (GOLDEN / "webkey_entry_minimal.txt").read_text()
    shape = (first.count("static call [") == 1 and first.count("\nif ") == 1 and ".flashLoan(" in first
             and "args 0, 1200 * 10^18, address(this), abi.encode(" in first)
    ok = first + "\n" == golden and first == second and shape and NonOverlappingMemory.writes > 0
    matched = first + "\n" == golden
    verdict("dual-decompiler golden", ok, f"golden match={matched}, deterministic={first == second}, "
                                          f"shape={shape}, memory writes checked={NonOverlappingMemory.writes}")


def _stmt(pc, value, step):
    pv = PairedValue(Const(value), value, step)
    return PseudoStmt("assign", step, pc, (PairedValue(Const(0), 0, step), pv), {"target": "storage"})


def _random_region(rng):
    k = rng.randint(2, 100)
    gens = []
    for _ in range(rng.randint(1, 5)):
        kind = rng.choice(["invariant", "affine", "divergent"])
        if kind == "invariant":
            gens.append(lambda i, v=rng.randrange(WORD): v)
        elif kind == "affine":
            gens.append(lambda i, b=rng.randrange(WORD), s=rng.randrange(1, WORD): (b + s * i) % WORD)
        else:
            gens.append(lambda i, t=[rng.randrange(2**64) for _ in range(k)]: t[i])
    bodies = tuple(tuple(_stmt(0x100 + j, g(i), 1000 * i + j) for j, g in enumerate(gens)) for i in range(k))
    return LoopRegion(0, k * len(gens), len(gens), k, bodies), bodies


def test_compressor_round_trip(verdict):
    rng = random.Random(2024)
    exact = 0
    for _ in range(1000):
        region, bodies = _random_region(rng)
        exact += expand(summarize(region)) == [s for b in bodies for s in b]
    _, traces = _scoped(fixtures.webkey())
    stmts = lift_function(traces[1], minimal=True)
    out, report = compress_report(stmts)
    loops = [s for s in out if s.kind == "loop"]
    one = len(loops) == 1 and loops[0].info["count"] == fixtures.ROUNDS
    ok = exact == 1000 and one and report.ratio >= 10
    verdict("compressor round-trip", ok, f"{exact}/1000 regions exact, 67-round callback as one template={one}, "
                                         f"size ratio={report.ratio:.1f}x (>= 10x)")


def _scoped(fx):
    stream = parse_trace(fx.native())
    cefg = build_cefg(stream)
    return stream, extract_instructions(localize_scope(build_call_graph(cefg), stream.initial_recipient), cefg)


def test_fund_flow_conservation(verdict):
    rng = random.Random(7)
    accounts = [ZERO_ADDRESS] + [f"0x{i:040x}" for i in range(1, 7)]
    tokens = [f"0x{0xee00 + i:040x}" for i in range(3)]
    conserved = matches = 0
    for _ in range(500):
        events = [(rng.choice(accounts), rng.choice(accounts), rng.randrange(10**30), rng.choice(tokens))
                  for _ in range(rng.randint(0, 40))]
        logs = [LogEntry(i, t, (TRANSFER_TOPIC, int(a, 16), int(b, 16)), word(v)) for i, (a, b, v, t) in
                enumerate(events)]
        deltas = extract_fund_flow(TraceStream("0x00", "ethereum", 1, 1, accounts[1], accounts[2], logs=logs))
        got = {(d.account, d.asset): d.delta for d in deltas}
        net = Counter()
        for a, b, v, t in events:
            net[a, t] -= v
            net[b, t] += v
        # the zero address is where mints come from and burns go
        mint = {t: net.pop((ZERO_ADDRESS, t), 0) for t in tokens}
        matches += got == {k: v for k, v in net.items() if v}
        conserved += all(sum(v for (a, tok), v in got.items() if tok == t) + mint[t] == 0 for t in tokens)
    raw = fixtures.flash_swap().native()
    from_ops = "\n".join(ln for ln in raw.splitlines() if json.loads(ln).get("kind") != "transfer")
    native = {d.account: d.delta for d in extract_fund_flow(parse_trace(from_ops)) if d.asset == NATIVE}
    profit = fixtures.SWAP_OUT + fixtures.LOOT - fixtures.REPAY
    payout = native.get(fixtures.EXPLOITER) == profit
    ok = conserved == 500 and matches == 500 and payout
    verdict("fund-flow conservation", ok, f"conserved {conserved}/500, brute-force equal {matches}/500, "
                                          f"native profit from CALL values={payout}")


def test_refinement_budgets_and_termination(verdict):
    rng = random.Random(11)
    bad = 0
    for _ in range(300):
        script = [rng.choice(scenarios.REPLIES) for _ in range(rng.randint(1, 8))]
        runs = [rng.choice(scenarios.RUNS) for _ in range(rng.randint(1, 4))]
        builds = [rng.random() < 0.5 for _ in range(rng.randint(1, 6))]
        bad += bool(scenarios.budget_violations(scenarios.adversarial_session(script, runs, builds)))
    provider = scenarios.repay_provider(lambda src: src.replace(scenarios.BUG, scenarios.FIX))
    r = run_pipeline(scenarios.flash_swap_raw(), PipelineConfig(), provider=provider,
                     harness=scenarios.repay_harness_factory, names=fixtures.flash_swap().names)
    repaired = r.status == "Verifiable" and r.semantic_iterations_used == 1
    verdict("refinement budgets and termination", bad == 0 and repaired,
            f"300 adversarial sessions, {bad} over budget; seeded tx.origin repayment -> {r.status} "
            f"after {r.semantic_iterations_used} semantic iteration(s)")


def test_end_to_end(verdict, tmp_path, capsys):
    trace = tmp_path / "webkey.jsonl"
    trace.write_text(fixtures.webkey().native())
    a = analyze(parse_trace(trace.read_text()))
    mock = tmp_path / "mock"
    mock.mkdir()
    (mock / f"{prompt_digest(completion_prompt(a.sketch, a.pseudocode))}.txt").write_text(
        scenarios.sections(scenarios.WHEEAAPPP_BODY))
    start = time.monotonic()
    main(["run", str(trace), "--mock-dir", str(mock), "--harness", "stub", "-o", str(tmp_path / "out")])
    elapsed = time.monotonic() - start
    full = json.loads(capsys.readouterr().out)
    main(["run", str(trace), "--mock-dir", str(mock), "--no-harness", "-o", str(tmp_path / "ro")])
    readable = json.loads(capsys.readouterr().out)
    sketch = Path(readable["artifacts"]["sketch.sol"]).read_text()
    markers = ("/*<<ATTACK_LOGIC>>*/", "/*<<OTHER_FUNCTIONS>>*/", "/*<<OTHER_CONTRACTS>>*/")
    structure = (f'vm.createSelectFork("bsc", {fixtures.WEBKEY_BLOCK - 1})' in sketch
                 and "[pre] USDT" in sketch and "[post] USDT" in sketch and all(sketch.count(m) == 1 for m in markers))
    ok = full["status"] == "Verifiable" and elapsed < 30 and readable["status"] == "Readable" and structure
    verdict("end-to-end", ok, f"run -> {full['status']} in {elapsed:.1f}s (< 30s); --no-harness -> "
                              f"{readable['status']}, sketch structure={structure}")


def test_failure_taxonomy(verdict):
    got = {code: build().status for code, build in scenarios.FAILURES.items()}
    ok = all(status == f"Failed({code})" for code, status in got.items())
    verdict("failure taxonomy", ok, ", ".join(f"{c} -> {s}" for c, s in got.items()))
