"""Flat call summaries of a transaction, shared by sketching and alignment."""

from __future__ import annotations

from dataclasses import dataclass

from . import opcodes as ops
from .cefg import digest, frame_inputs
from .hexutil import norm_address
from .ingest import TraceStream


@dataclass(frozen=True)
class CallSummary:
    index: int  # position in call order
    op: str
    caller: str
    target: str
    input: bytes = b""
    value: int = 0
    status: str = "ok"  # ok | reverted
    depth: int = 1
    return_data: bytes = b""

    @property
    def selector(self) -> str | None:
        return "0x" + self.input[:4].hex() if len(self.input) >= 4 and self.op not in ops.CREATE_OPS else None

    @property
    def words(self) -> tuple[int, ...]:
        body = self.input[4:]
        return tuple(int.from_bytes(body[i : i + 32], "big") for i in range(0, len(body) - 31, 32))

    @property
    def args_digest(self) -> str:
        return digest(self.input[4:])

    @property
    def creates(self) -> bool:
        return self.op in ops.CREATE_OPS


def call_summaries(stream: TraceStream, callers: set[int] | None = None) -> list[CallSummary]:
    """One summary per call-family step, in execution order.

    ``callers`` limits the result to calls issued from those frames.
    """
    inputs = frame_inputs(stream)
    child_of_step = {f.entry_step: f for f in stream.frames if f.entry_step is not None}
    out: list[CallSummary] = []
    for i, rs in enumerate(stream.steps):
        s = rs.step
        if s.op not in ops.CALL_OPS and s.op not in ops.CREATE_OPS:
            continue
        if callers is not None and s.frame not in callers:
            continue
        child = child_of_step.get(i)
        if s.op in ops.CREATE_OPS:
            target = norm_address(s.result) if s.result else ""
            value = s.stack_top[0] if s.stack_top else 0
        else:
            target = norm_address(s.stack_top[1]) if len(s.stack_top) > 1 else ""
            value = s.stack_top[2] if s.op in ("CALL", "CALLCODE") and len(s.stack_top) > 2 else 0
        data = inputs.get(child.id, b"") if child is not None else (s.memory_slice or b"")
        failed = (child is not None and child.status != "ok") or s.result == 0
        out.append(CallSummary(len(out), s.op, s.context_address, target, bytes(data), value,
                               "reverted" if failed else "ok", s.depth, bytes(s.return_data or b"")))
    return out


def created_addresses(calls: list[CallSummary]) -> list[str]:
    return [c.target for c in calls if c.creates and c.status == "ok" and c.target]
