"""Fold fully unrolled loops back into parameterized templates.

A trace of a loop repeats the same statement shapes once per iteration. We
look for consecutive repetitions of a key sequence, where the key of a
statement is its kind, its pc and its shape with every int and bytes leaf
replaced by a hole. Each repetition becomes a :class:`LoopTemplate` whose
holes are classified across iterations as invariant, affine in the loop index,
or a value table.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from typing import Any, Hashable, Sequence

import numpy as np

from .errors import ShapeMismatch
from .hexutil import WORD
from .lifter import PseudoStmt

MIN_BODY = 2
MAX_PERIOD = 1024
TABLE_CAP = 4096


# -- generic parameterization ---------------------------------------------------


class _Hole:
    __slots__ = ()

    def __repr__(self):
        return "?"


HOLE = _Hole()
_LIT = "literal"


def parameterize(obj: Any, values: list) -> Hashable:
    """Shape of ``obj`` with int and bytes leaves replaced by :data:`HOLE`.

    The replaced leaves are appended to ``values`` in depth-first order, so
    ``instantiate(shape, iter(values))`` rebuilds an equal object.
    """
    t = type(obj)
    if t is int or t is bytes:
        values.append(obj)
        return HOLE
    if t is tuple:
        return (tuple, tuple(parameterize(x, values) for x in obj))
    if t is list:
        return (list, tuple(parameterize(x, values) for x in obj))
    if t is dict:
        return (dict, tuple((k, parameterize(v, values)) for k, v in obj.items()))
    if t is PseudoStmt:
        # pc and kind are structural: they stay in the shape
        return (
            PseudoStmt,
            (
                (_LIT, obj.kind),
                parameterize(obj.step, values),
                (_LIT, obj.pc),
                parameterize(obj.operands, values),
                parameterize(obj.info, values),
                parameterize(obj.children, values),
            ),
        )
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return (t, tuple(parameterize(getattr(obj, f.name), values) for f in dataclasses.fields(obj)))
    return (_LIT, obj)


def instantiate(shape: Hashable, values) -> Any:
    if shape is HOLE:
        return next(values)
    tag, body = shape
    if tag == _LIT:
        return body
    if tag is tuple:
        return tuple(instantiate(x, values) for x in body)
    if tag is list:
        return [instantiate(x, values) for x in body]
    if tag is dict:
        return {k: instantiate(v, values) for k, v in body}
    parts = [instantiate(x, values) for x in body]
    return tag(*parts)


def stmt_key(stmt: PseudoStmt) -> Hashable:
    return (stmt.kind, stmt.pc, parameterize(stmt, []))


# -- detection -------------------------------------------------------------------


@dataclass(frozen=True)
class LoopRegion:
    entry: int
    exit: int  # one past the last element
    body_length: int
    k: int
    bodies: tuple = ()

    @property
    def span(self) -> int:
        return self.exit - self.entry


def _ids(seq: Sequence[Hashable]) -> np.ndarray:
    table: dict[Hashable, int] = {}
    return np.fromiter((table.setdefault(x, len(table)) for x in seq), dtype=np.int64, count=len(seq))


def _candidates(ids: np.ndarray, min_body: int, max_period: int) -> list[tuple[int, int, int]]:
    """Maximal ``(start, period, k)`` repetitions, earliest alignment per run.

    Periods whose body is itself periodic are left to the shorter period.
    """
    n = len(ids)
    out = []
    for p in range(min_body, min(n // 2, max_period) + 1):
        eq = ids[:-p] == ids[p:]
        if not eq.any():
            continue
        edges = np.diff(np.concatenate(([0], eq.view(np.int8), [0])))
        starts = np.flatnonzero(edges == 1)
        lengths = np.flatnonzero(edges == -1) - starts
        for s, run in zip(starts[lengths >= p], lengths[lengths >= p]):
            if _primitive(ids[s : s + p]):
                out.append((int(s), p, int(run) // p + 1))
    return out


def _primitive(body: np.ndarray) -> bool:
    """False if ``body`` is itself a repetition of a shorter block."""
    p = len(body)
    for d in range(1, p // 2 + 1):
        if p % d == 0 and np.array_equal(body, np.tile(body[:d], p // d)):
            return False
    return True


def _select(cands: list[tuple[int, int, int]]) -> list[tuple[int, int, int]]:
    """Innermost candidates first, then longest span, smallest period, earliest start."""

    def contains_smaller(c) -> bool:
        s, p, k = c
        e = s + p * k
        return any(p2 < p and s2 >= s and s2 + p2 * k2 <= e for s2, p2, k2 in cands)

    inner = [c for c in cands if not contains_smaller(c)]
    inner.sort(key=lambda c: (-c[1] * c[2], c[1], c[0]))
    chosen: list[tuple[int, int, int]] = []
    for c in inner:
        s, p, k = c
        e = s + p * k
        if all(e <= s2 or s >= s2 + p2 * k2 for s2, p2, k2 in chosen):
            chosen.append(c)
    chosen.sort()
    return chosen


def detect_loops(seq: Sequence[Hashable], *, min_body: int = MIN_BODY, max_period: int = MAX_PERIOD,
                 skip=None) -> list[LoopRegion]:
    """Consecutive repetitions in ``seq`` (one round; innermost first).

    ``skip`` can veto candidates, given ``(start, period, k)``.
    """
    if len(seq) < 2 * min_body:
        return []
    cands = _candidates(_ids(seq), min_body, max_period)
    if skip is not None:
        cands = [c for c in cands if not skip(c)]
    regions = []
    for s, p, k in _select(cands):
        bodies = tuple(tuple(seq[s + i * p : s + (i + 1) * p]) for i in range(k))
        regions.append(LoopRegion(s, s + p * k, p, k, bodies))
    return regions


# -- templates --------------------------------------------------------------------


@dataclass(frozen=True)
class Invariant:
    value: Any

    def at(self, i: int):
        return self.value


@dataclass(frozen=True)
class DeterministicVariation:
    base: int
    stride: int

    def at(self, i: int) -> int:
        return (self.base + self.stride * i) % WORD


@dataclass(frozen=True)
class ComplexDivergence:
    table: tuple

    def at(self, i: int):
        return self.table[i]


def classify(values: Sequence) -> Invariant | DeterministicVariation | ComplexDivergence:
    first = values[0]
    if all(type(v) is type(first) and v == first for v in values):
        return Invariant(first)
    if all(type(v) is int for v in values):
        stride = (values[1] - values[0]) % WORD
        if all(v == (values[0] + stride * i) % WORD for i, v in enumerate(values)):
            return DeterministicVariation(values[0], stride)
    return ComplexDivergence(tuple(values))


class SlotRef:
    """Stand-in for a varying leaf while a template body is rendered."""

    __slots__ = ("index",)

    def __init__(self, index: int):
        self.index = index

    def __str__(self):
        return f"\x00{self.index}\x00"

    def __bool__(self):
        return True


_SLOT_RE = re.compile("\x00(\\d+)\x00")


@dataclass(frozen=True)
class LoopTemplate:
    k: int
    shape: Hashable
    slots: tuple
    index_var: str = "i"

    @property
    def table_size(self) -> int:
        return max((len(s.table) for s in self.slots if isinstance(s, ComplexDivergence)), default=0)

    def body(self, i: int) -> list:
        return instantiate(self.shape, iter([s.at(i) for s in self.slots]))

    def render_into(self, renderer, depth: int, out: list[str]) -> None:
        from .render import INDENT, render_const

        refs = [s.value if isinstance(s, Invariant) else SlotRef(n) for n, s in enumerate(self.slots)]
        body: list[str] = []
        renderer.lines(instantiate(self.shape, iter(refs)), depth + 1, body)
        names: dict[int, str] = {}
        tables: list[str] = []
        iv = self.index_var

        def name(m: re.Match) -> str:
            n = int(m.group(1))
            if n not in names:
                slot = self.slots[n]
                if isinstance(slot, DeterministicVariation):
                    names[n] = _affine_text(slot, iv, render_const)
                else:
                    arr = f"arr{len(tables) + 1}"
                    vals = ", ".join(_value_text(v, render_const) for v in slot.table)
                    tables.append(f"{INDENT * depth}{arr} = [{vals}]")
                    names[n] = f"{arr}[{iv}]"
            return names[n]

        body = [_SLOT_RE.sub(name, line) for line in body]
        out.extend(tables)
        out.append(f"{INDENT * depth}for {iv} in 0..{self.k}:")
        out.extend(body)


def _affine_text(slot: DeterministicVariation, iv: str, fmt) -> str:
    stride = slot.stride
    sign = "+"
    if stride > WORD // 2:
        stride, sign = WORD - stride, "-"
    term = iv if stride == 1 else f"{fmt(stride)} * {iv}"
    if slot.base == 0 and sign == "+":
        return term
    return f"({fmt(slot.base)} {sign} {term})"


def _value_text(v, fmt) -> str:
    if isinstance(v, bytes):
        return "0x" + v.hex()
    return fmt(v)


def summarize(region: LoopRegion) -> LoopTemplate:
    if not region.bodies:
        raise ShapeMismatch("region has no bodies")
    shapes, columns = [], []
    for body in region.bodies:
        vals: list = []
        shapes.append(parameterize(list(body), vals))
        columns.append(vals)
    if any(s != shapes[0] for s in shapes[1:]):
        raise ShapeMismatch(f"loop bodies at {region.entry} differ structurally")
    slots = tuple(classify([col[j] for col in columns]) for j in range(len(columns[0])))
    return LoopTemplate(region.k, shapes[0], slots)


def expand(template: LoopTemplate) -> list:
    out: list = []
    for i in range(template.k):
        out.extend(template.body(i))
    return out


# -- statement-level driver ----------------------------------------------------------


def loop_stmt(template: LoopTemplate, first: PseudoStmt) -> PseudoStmt:
    return PseudoStmt("loop", first.step, first.pc, (), {"count": template.k, "template": template})


def rendered_size(stmts) -> int:
    from .render import render_pseudocode

    return len(render_pseudocode(stmts))


def compress(stmts: list[PseudoStmt], *, min_body: int = MIN_BODY, table_cap: int = TABLE_CAP,
             max_period: int = MAX_PERIOD) -> list[PseudoStmt]:
    """Replace unrolled loops by ``loop`` statements, innermost first.

    A region is only folded when that shortens the rendered pseudocode and its
    value tables stay within ``table_cap`` entries.
    """
    stmts = [
        dataclasses.replace(s, children=compress(s.children, min_body=min_body, table_cap=table_cap,
                                                 max_period=max_period))
        if s.children else s
        for s in stmts
    ]
    rejected: set = set()
    while True:
        keys = [stmt_key(s) for s in stmts]

        def skip(c, keys=keys):
            s, p, k = c
            return (p, k, tuple(keys[s : s + p * k])) in rejected

        regions = detect_loops(keys, min_body=min_body, max_period=max_period, skip=skip)
        if not regions:
            return stmts
        for r in reversed(regions):
            bodies = tuple(tuple(stmts[r.entry + i * r.body_length : r.entry + (i + 1) * r.body_length])
                           for i in range(r.k))
            template = summarize(dataclasses.replace(r, bodies=bodies))
            loop = loop_stmt(template, bodies[0][0])
            if template.table_size > table_cap or rendered_size([loop]) >= rendered_size(stmts[r.entry : r.exit]):
                rejected.add((r.body_length, r.k, tuple(keys[r.entry : r.exit])))
                continue
            stmts[r.entry : r.exit] = [loop]


def expand_all(stmts: list[PseudoStmt]) -> list[PseudoStmt]:
    """Undo :func:`compress` completely, including nested loops."""
    out = []
    for s in stmts:
        if s.kind == "loop" and "template" in s.info:
            out.extend(expand_all(expand(s.info["template"])))
        elif s.children:
            out.append(dataclasses.replace(s, children=expand_all(s.children)))
        else:
            out.append(s)
    return out


@dataclass
class CompressionReport:
    size_before: int
    size_after: int
    loops: list[tuple[int, int]] = field(default_factory=list)  # (body length, k)

    @property
    def ratio(self) -> float:
        return self.size_before / self.size_after if self.size_after else float("inf")


def compress_report(stmts: list[PseudoStmt], **kw) -> tuple[list[PseudoStmt], CompressionReport]:
    out = compress(stmts, **kw)
    loops = []
    for s in out:
        if s.kind == "loop":
            t = s.info["template"]
            loops.append((len(t.body(0)), t.k))
    return out, CompressionReport(rendered_size(stmts), rendered_size(out), loops)
