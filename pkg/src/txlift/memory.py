"""Segment-based memory model with symbolic provenance.

Memory is a sorted list of non-overlapping segments, each holding the
expression that produced its bytes and the bytes themselves. A write that
partially overlaps older segments keeps their uncovered remainders as slices.
A read returns the exact segment when it matches one, or else a concatenation
of slices plus zero markers for gaps that were never written.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

from .expr import Blob, Concat, Const, Expr, MemZero, PairedValue, ReturnData, Slice, concrete_bytes, width


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    expr: Expr
    data: bytes

    def __post_init__(self):
        if len(self.data) != self.end - self.start:
            raise ValueError("segment data length does not match its span")

    def cut(self, start: int, end: int) -> "Segment":
        """The sub-segment covering ``[start, end)``."""
        lo, hi = start - self.start, end - self.start
        return Segment(start, end, slice_expr(self.expr, lo, hi - lo), self.data[lo:hi])


def slice_expr(e: Expr, offset: int, size: int) -> Expr:
    if offset == 0 and size == width(e):
        return e
    if isinstance(e, Slice):
        return slice_expr(e.base, e.offset + offset, size)
    if isinstance(e, MemZero):
        return MemZero(e.offset + offset, size)
    if isinstance(e, ReturnData):
        return ReturnData(e.call, e.offset + offset, size)
    data = concrete_bytes(e)
    if data is not None:
        return const_of(data[offset : offset + size])
    return Slice(e, offset, size)


def const_of(data: bytes) -> Expr:
    """A 32-byte constant folds to an int; other widths keep their bytes."""
    return Const(int.from_bytes(data, "big")) if len(data) == 32 else Blob(bytes(data))


class ConcreteMemoryMap:
    def __init__(self):
        self.segments: list[Segment] = []

    def __len__(self):
        return len(self.segments)

    def _overlapping(self, start: int, end: int) -> tuple[int, int]:
        """Index range of segments intersecting ``[start, end)``."""
        starts = [s.start for s in self.segments]
        i = bisect.bisect_right(starts, start) - 1
        if i < 0 or self.segments[i].end <= start:
            i += 1
        j = bisect.bisect_left(starts, end)
        return i, j

    def write(self, offset: int, value: PairedValue, size: int | None = None) -> Segment | None:
        """Store ``value`` over ``[offset, offset+size)``.

        ``value.concrete`` may be an int (a stack word, taken big-endian at
        ``size`` bytes) or bytes of exactly ``size``.
        """
        data = value.concrete
        if size is None:
            size = len(data) if isinstance(data, (bytes, bytearray)) else 32
        if size == 0:
            return None
        if isinstance(data, int):
            data = (data % (1 << (8 * size))).to_bytes(size, "big")
        elif data is None:
            raise ValueError("memory write without a concrete value")
        data = bytes(data)
        if len(data) != size:
            raise ValueError(f"write of {len(data)} bytes into a {size}-byte span")
        expr = value.expr if width(value.expr) == size else slice_expr(value.expr, width(value.expr) - size, size)
        return self._insert(Segment(offset, offset + size, expr, data))

    def _insert(self, seg: Segment) -> Segment:
        i, j = self._overlapping(seg.start, seg.end)
        keep: list[Segment] = []
        for old in self.segments[i:j]:
            if old.start < seg.start:
                keep.append(old.cut(old.start, seg.start))
            if old.end > seg.end:
                keep.append(old.cut(seg.end, old.end))
        keep.append(seg)
        keep.sort(key=lambda s: s.start)
        self.segments[i:j] = keep
        return seg

    def parts(self, offset: int, size: int) -> list[Segment]:
        """Segments covering ``[offset, offset+size)``, gaps as zero markers."""
        out: list[Segment] = []
        end = offset + size
        cur = offset
        i, j = self._overlapping(offset, end)
        for seg in self.segments[i:j]:
            if seg.start > cur:
                out.append(Segment(cur, seg.start, MemZero(cur, seg.start - cur), bytes(seg.start - cur)))
                cur = seg.start
            hi = min(seg.end, end)
            out.append(seg.cut(cur, hi))
            cur = hi
        if cur < end:
            out.append(Segment(cur, end, MemZero(cur, end - cur), bytes(end - cur)))
        return out

    def read(self, offset: int, size: int = 32, step: int = -1) -> PairedValue:
        if size == 0:
            return PairedValue(Blob(b""), b"", step)
        parts = self.parts(offset, size)
        data = b"".join(p.data for p in parts)
        if len(parts) == 1:
            expr = parts[0].expr
        elif all(concrete_bytes(p.expr) is not None for p in parts):
            expr = const_of(data)
        else:
            expr = Concat(tuple((p.expr, p.end - p.start) for p in parts))
        concrete: int | bytes = int.from_bytes(data, "big") if size == 32 else data
        return PairedValue(expr, concrete, step)

    def copy(self, dest: int, src: int, size: int) -> None:
        """MCOPY: re-anchor the source parts at ``dest`` keeping provenance."""
        if size == 0:
            return
        moved = [
            Segment(p.start - src + dest, p.end - src + dest, p.expr, p.data) for p in self.parts(src, size)
        ]
        for seg in moved:
            self._insert(seg)

    def snapshot(self) -> bytes:
        """Flat concrete image, for tests."""
        if not self.segments:
            return b""
        buf = bytearray(self.segments[-1].end)
        for s in self.segments:
            buf[s.start : s.end] = s.data
        return bytes(buf)
