"""Offline analysis of one parsed transaction: from trace to PoC sketch."""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable

from .cefg import Cefg, build_cefg
from .compress import compress
from .errors import EmptyScope, PipelineTimeout
from .fundflow import E18, AssetDelta, AssetPriority, OracleSpec, fund_flow, identify_beneficiary, synthesize_oracles
from .ingest import TraceStream
from .lifter import lift_function
from .scope import AttackScope, CallGraph, build_call_graph, extract_instructions, localize_scope
from .selectors import SelectorDB
from .sketch import LiftedFunction, PocSketch, SketchMeta, build_sketch, render_functions


@dataclass
class Stopwatch:
    """Per-stage wall-clock timings with an optional deadline checked between stages."""

    timeout: float | None = None
    clock: Callable[[], float] = time.monotonic
    timings: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.start = self.clock()

    def elapsed(self) -> float:
        return self.clock() - self.start

    def remaining(self) -> float | None:
        return None if self.timeout is None else self.timeout - self.elapsed()

    def check(self, where: str) -> None:
        left = self.remaining()
        if left is not None and left < 0:
            raise PipelineTimeout(f"global timeout of {self.timeout}s exceeded {where}")

    def budget(self, per_function: float | None) -> float | None:
        left = self.remaining()
        if left is None:
            return per_function
        return max(0.0, left if per_function is None else min(per_function, left))

    @contextmanager
    def stage(self, name: str):
        self.check(f"before {name}")
        t0 = self.clock()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + self.clock() - t0
        self.check(f"during {name}")


@dataclass
class Analysis:
    stream: TraceStream
    cefg: Cefg
    call_graph: CallGraph
    scope: AttackScope | None
    functions: list[LiftedFunction]
    deltas: list[AssetDelta]
    beneficiary: str
    oracle: OracleSpec
    sketch: PocSketch
    skipped_logs: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def pseudocode(self) -> str:
        return render_functions(self.functions, self.sketch.prompt_aliases())


def lift_scope(scope: AttackScope, cefg: Cefg, *, minimal: bool = True, compressed: bool = True,
               selectors: SelectorDB | None = None, budget: float | None = None,
               watch: Stopwatch | None = None) -> list[LiftedFunction]:
    watch = watch or Stopwatch()
    lifted = []
    with watch.stage("lift"):
        for ft in extract_instructions(scope, cefg):
            lifted.append((ft, lift_function(ft, minimal=minimal, selectors=selectors, budget=watch.budget(budget))))
    with watch.stage("compress"):
        return [LiftedFunction(ft, compress(stmts) if compressed else stmts, scope.provenance[ft.owner.key])
                for ft, stmts in lifted]


def analyze(
    stream: TraceStream,
    *,
    minimal: bool = True,
    compressed: bool = True,
    priority: AssetPriority | None = None,
    funding_floor: int = E18,
    direct: bool = False,
    names: dict[str, str] | None = None,
    selectors: SelectorDB | None = None,
    budget: float | None = None,
    watch: Stopwatch | None = None,
) -> Analysis:
    """Run the static stages on a parsed trace.

    ``budget`` bounds lifting of each function. ``watch`` collects stage timings
    and raises :class:`PipelineTimeout` once its deadline has passed.
    """
    watch = watch or Stopwatch()
    selectors = selectors or SelectorDB.builtin()
    with watch.stage("cefg"):
        cefg = build_cefg(stream)
    notes: list[str] = []
    scope: AttackScope | None
    with watch.stage("scope"):
        cg = build_call_graph(cefg)
        try:
            scope = localize_scope(cg, stream.initial_recipient)
        except EmptyScope as e:
            scope = None
            notes.append(f"no attack contract: {e}")
    functions = [] if scope is None or direct else lift_scope(
        scope, cefg, minimal=minimal, compressed=compressed, selectors=selectors, budget=budget, watch=watch)
    with watch.stage("fundflow"):
        flow = fund_flow(stream)
        priority = priority or AssetPriority.for_chain(stream.chain)
        beneficiary = identify_beneficiary(flow.deltas, stream.sender, stream.initial_recipient, priority)
        oracle = synthesize_oracles(flow.deltas, beneficiary, stream.value_transfers, stream.sender, funding_floor)
    with watch.stage("sketch"):
        meta = SketchMeta(stream.chain, stream.block_number, stream.sender, stream.initial_recipient, stream.input,
                          stream.value)
        sketch = build_sketch(scope, functions, oracle, meta, names=names, selectors=selectors, direct=direct)
    return Analysis(stream, cefg, cg, scope, functions, flow.deltas, beneficiary, oracle, sketch,
                    flow.skipped_logs, notes)
