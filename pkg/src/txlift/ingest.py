"""Trace ingestion: parse raw traces into a normalized, selectively recorded step stream.

Two input formats are accepted:

* ``geth``: the JSON returned by ``debug_traceTransaction`` with the default
  struct logger (``structLogs``), optionally wrapped in ``{"result": ...}`` and
  optionally carrying a ``tx`` object with transaction metadata.
* ``native``: line-delimited JSON. The first line is a ``tx`` header, followed by
  ``step``, ``log`` and ``transfer`` records (see ``docs/native-format.md``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable

from . import opcodes as ops
from .errors import DepthDiscontinuity, InsufficientStack, MalformedTrace, UnknownOpcode
from .hexutil import ZERO_ADDRESS, keccak, norm_address, to_bytes, to_int

DEFAULT_STACK_DEPTH = 8
LARGE_CALLDATA = 4096


class Category(str, Enum):
    CONSTANTS = "Constants"
    CONTROL_FLOW = "ControlFlow"
    EXTERNAL_CONTEXT = "ExternalContext"
    INTERNAL_STATE = "InternalState"
    INPUT_DATA = "InputData"
    NONE = "None"


_EXTERNAL = frozenset(
    {
        "EXTCODECOPY", "CODECOPY", "CODESIZE", "EXTCODESIZE",
        "CALL", "CALLCODE", "DELEGATECALL", "STATICCALL",
        "RETURNDATASIZE", "RETURNDATACOPY",
    }
)
_INTERNAL = frozenset({"SLOAD", "TLOAD"})
_INPUT = frozenset({"CALLDATACOPY", "CALLDATASIZE", "CALLDATALOAD"})


@dataclass(frozen=True)
class TraceStep:
    pc: int
    op: str
    opcode: int
    depth: int
    gas: int
    stack_top: tuple[int, ...] = ()  # top of stack first
    memory_slice: bytes | None = None
    context_address: str = ZERO_ADDRESS
    code_address: str = ZERO_ADDRESS
    immediate: int | None = None
    # filled in from the step where execution resumes in the same frame
    result: int | None = None
    return_data: bytes | None = None
    frame: int = 0
    frame_status: str = "ok"  # ok | reverted | oog
    partial: bool = False
    raw_byte: int | None = None


@dataclass(frozen=True)
class RecordedStep:
    step: TraceStep
    category: Category
    recorded: tuple[tuple[str, int | bytes], ...] = ()

    def value(self, tag: str, default=None):
        for t, v in self.recorded:
            if t == tag:
                return v
        return default


@dataclass(frozen=True)
class Frame:
    id: int
    parent: int | None
    depth: int
    entry_step: int | None  # the call-family step that opened the frame
    first_step: int
    last_step: int
    status: str  # ok | reverted | oog
    reverted: bool  # status or any ancestor's status is a revert


@dataclass(frozen=True)
class LogEntry:
    step: int
    address: str
    topics: tuple[int, ...]
    data: bytes
    reverted: bool = False


@dataclass(frozen=True)
class ValueTransfer:
    step: int
    sender: str
    recipient: str
    amount: int
    op: str
    reverted: bool = False


@dataclass
class TraceStream:
    tx_hash: str
    chain: str
    chain_id: int
    block_number: int
    sender: str
    initial_recipient: str
    input: bytes = b""
    value: int = 0
    steps: list[RecordedStep] = field(default_factory=list)
    logs: list[LogEntry] = field(default_factory=list)
    value_transfers: list[ValueTransfer] = field(default_factory=list)
    frames: list[Frame] = field(default_factory=list)
    calldata_table: dict[str, bytes] = field(default_factory=dict)

    def __len__(self):
        return len(self.steps)


# -- classification and recording ---------------------------------------------


def classify_opcode(opcode: str) -> Category:
    name = ops.normalize(opcode)
    if name == ops.UNKNOWN:
        return Category.NONE
    if name not in ops.OPCODES:
        raise UnknownOpcode(opcode)
    if ops.is_push(name):
        return Category.CONSTANTS
    if name == "JUMPI":
        return Category.CONTROL_FLOW
    if name in _EXTERNAL:
        return Category.EXTERNAL_CONTEXT
    if name in _INTERNAL:
        return Category.INTERNAL_STATE
    if name in _INPUT:
        return Category.INPUT_DATA
    return Category.NONE


_STACK_TAGS = {
    "JUMPI": ("target", "cond"),
    "CALL": ("gas", "target", "value", "args_offset", "args_length", "ret_offset", "ret_length"),
    "CALLCODE": ("gas", "target", "value", "args_offset", "args_length", "ret_offset", "ret_length"),
    "DELEGATECALL": ("gas", "target", "args_offset", "args_length", "ret_offset", "ret_length"),
    "STATICCALL": ("gas", "target", "args_offset", "args_length", "ret_offset", "ret_length"),
    "EXTCODECOPY": ("address", "dest_offset", "offset", "size"),
    "CODECOPY": ("dest_offset", "offset", "size"),
    "RETURNDATACOPY": ("dest_offset", "offset", "size"),
    "CALLDATACOPY": ("dest_offset", "offset", "size"),
    "EXTCODESIZE": ("address",),
    "SLOAD": ("slot",),
    "TLOAD": ("slot",),
    "CALLDATALOAD": ("offset",),
}
_RESULT_OPS = frozenset(
    {"CODESIZE", "EXTCODESIZE", "RETURNDATASIZE", "CALLDATASIZE", "SLOAD", "TLOAD", "CALLDATALOAD"}
)
_DATA_OPS = frozenset({"EXTCODECOPY", "CODECOPY", "RETURNDATACOPY", "CALLDATACOPY"})


def record_step(step: TraceStep, category: Category) -> RecordedStep:
    """Attach the concrete values the lifter needs for ``step``'s category."""
    if category is Category.NONE:
        return RecordedStep(step, category, ())
    op = step.op
    rec: list[tuple[str, int | bytes]] = []
    if category is Category.CONSTANTS:
        imm = 0 if op == "PUSH0" else step.immediate
        if imm is None:
            imm = step.result
        if imm is None:
            raise InsufficientStack(f"{op} at pc {step.pc:#x}: immediate not captured")
        return RecordedStep(step, category, (("imm", imm),))

    tags = _STACK_TAGS.get(op, ())
    if len(step.stack_top) < len(tags):
        raise InsufficientStack(
            f"{op} at pc {step.pc:#x} needs {len(tags)} stack words, trace captured {len(step.stack_top)}"
        )
    rec.extend(zip(tags, step.stack_top))

    if op in ops.CALL_OPS:
        if step.memory_slice is not None:
            rec.append(("input", step.memory_slice))
        if step.result is not None:
            rec.append(("success", step.result))
        if step.return_data is not None:
            rec.append(("return_data", step.return_data))
    elif op in _DATA_OPS:
        if step.memory_slice is not None:
            rec.append(("data", step.memory_slice))
    if op in _RESULT_OPS and step.result is not None:
        rec.append(("result", step.result))
    if not rec:
        raise InsufficientStack(f"{op} at pc {step.pc:#x}: result not captured")
    return RecordedStep(step, category, tuple(rec))


# -- parsing ------------------------------------------------------------------


def parse_trace(raw: bytes | str, format: str = "native", stack_depth: int = DEFAULT_STACK_DEPTH) -> TraceStream:
    """Parse ``raw`` into a validated :class:`TraceStream`."""
    if isinstance(raw, bytes):
        try:
            raw = raw.decode()
        except UnicodeDecodeError as exc:
            raise MalformedTrace(f"trace is not UTF-8: {exc}") from exc
    if format in ("geth", "geth-structlogs"):
        header, rows, logs, transfers = _read_geth(raw)
    elif format == "native":
        header, rows, logs, transfers = _read_native(raw)
    else:
        raise ValueError(f"unknown trace format {format!r}")
    return _finalize(header, rows, logs, transfers, stack_depth)


def _hdr(obj: dict) -> dict:
    return {
        "tx_hash": str(obj.get("tx_hash", obj.get("hash", "0x" + "00" * 32))).lower(),
        "chain": str(obj.get("chain", "mainnet")),
        "chain_id": to_int(obj.get("chain_id", obj.get("chainId", 1))),
        "block_number": to_int(obj.get("block_number", obj.get("blockNumber", 0))),
        "sender": norm_address(obj.get("sender", obj.get("from", ZERO_ADDRESS))),
        "to": norm_address(obj["to"]) if obj.get("to") else None,
        "input": to_bytes(obj.get("input", "0x")),
        "value": to_int(obj.get("value", 0)),
    }


def _read_native(raw: str):
    header = None
    rows: list[dict] = []
    logs: list[dict] = []
    transfers: list[dict] = []
    for lineno, line in enumerate(raw.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedTrace(f"line {lineno}: {exc}") from exc
        if not isinstance(obj, dict):
            raise MalformedTrace(f"line {lineno}: expected an object")
        kind = obj.get("kind")
        try:
            if kind == "tx":
                header = _hdr(obj)
            elif kind == "step":
                rows.append(
                    {
                        "pc": to_int(obj["pc"]),
                        "op": obj["op"],
                        "depth": to_int(obj["depth"]),
                        "gas": to_int(obj.get("gas", 0)),
                        "stack": [to_int(v) for v in obj.get("stack", [])],
                        "mem": to_bytes(obj["mem"]) if obj.get("mem") is not None else None,
                        "address": norm_address(obj["address"]) if obj.get("address") else None,
                        "code_address": norm_address(obj["code_address"]) if obj.get("code_address") else None,
                        "imm": to_int(obj["imm"]) if obj.get("imm") is not None else None,
                        "returndata": to_bytes(obj["returndata"]) if obj.get("returndata") is not None else None,
                        "raw_byte": to_int(obj["opcode"]) if obj.get("opcode") is not None else None,
                    }
                )
            elif kind == "log":
                logs.append(
                    {
                        "step": to_int(obj["step"]),
                        "address": norm_address(obj["address"]),
                        "topics": tuple(to_int(t) for t in obj.get("topics", [])),
                        "data": to_bytes(obj.get("data", "0x")),
                    }
                )
            elif kind == "transfer":
                transfers.append(
                    {
                        "step": to_int(obj["step"]),
                        "from": norm_address(obj["from"]),
                        "to": norm_address(obj["to"]),
                        "value": to_int(obj["value"]),
                        "op": str(obj.get("op", "CALL")),
                    }
                )
            # unknown record kinds are ignored
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedTrace(f"line {lineno}: bad {kind} record: {exc}") from exc
    if header is None:
        if not rows:
            raise MalformedTrace("native trace without tx header")
        header = _hdr({})
    return header, rows, logs if logs else None, transfers if transfers else None


def _read_geth(raw: str):
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedTrace(str(exc)) from exc
    if isinstance(obj, dict) and "result" in obj and isinstance(obj["result"], dict):
        tx = obj.get("tx", {})
        obj = dict(obj["result"], tx=obj["result"].get("tx", tx))
    if isinstance(obj, list):
        obj = {"structLogs": obj}
    if not isinstance(obj, dict) or "structLogs" not in obj:
        raise MalformedTrace("missing structLogs")
    header = _hdr(obj.get("tx") or {})
    rows = []
    try:
        for entry in obj["structLogs"]:
            stack = [to_int(v) for v in entry.get("stack") or []]
            memory = entry.get("memory")
            rows.append(
                {
                    "pc": to_int(entry["pc"]),
                    "op": entry["op"],
                    "depth": to_int(entry["depth"]),
                    "gas": to_int(entry.get("gas", 0)),
                    "stack": list(reversed(stack)),  # geth lists bottom first
                    "memory": b"".join(to_bytes(w) for w in memory) if memory is not None else None,
                    "mem": None,
                    "address": None,
                    "code_address": None,
                    "imm": None,
                    "returndata": None,
                    "raw_byte": None,
                    "error": entry.get("error"),
                }
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedTrace(f"bad structLog entry: {exc}") from exc
    _geth_memory_slices(rows)
    return header, rows, None, None


def _slice(memory: bytes | None, offset: int, size: int) -> bytes | None:
    if memory is None:
        return None
    if size == 0:
        return b""
    if offset + size > len(memory):
        return (memory[offset:] + b"\x00" * size)[:size] if offset < len(memory) else b"\x00" * size
    return memory[offset : offset + size]


_MEM_ARGS = {
    "CALL": (3, 4),
    "CALLCODE": (3, 4),
    "DELEGATECALL": (2, 3),
    "STATICCALL": (2, 3),
    "CREATE": (1, 2),
    "CREATE2": (1, 2),
    "RETURN": (0, 1),
    "REVERT": (0, 1),
    "SHA3": (0, 1),
    "KECCAK256": (0, 1),
    **{f"LOG{n}": (0, 1) for n in range(5)},
}
# copies land in memory, visible in the following step's snapshot
_MEM_COPIES = {"CALLDATACOPY": (0, 2), "CODECOPY": (0, 2), "RETURNDATACOPY": (0, 2), "EXTCODECOPY": (1, 3)}


def _geth_memory_slices(rows: list[dict]) -> None:
    for i, row in enumerate(rows):
        op = ops.normalize(row["op"])
        st = row["stack"]
        if op in _MEM_ARGS:
            o, s = _MEM_ARGS[op]
            if len(st) > max(o, s):
                row["mem"] = _slice(row["memory"], st[o], st[s])
        elif op in _MEM_COPIES and i + 1 < len(rows):
            o, s = _MEM_COPIES[op]
            if len(st) > max(o, s) and rows[i + 1]["depth"] == row["depth"]:
                row["mem"] = _slice(rows[i + 1]["memory"], st[o], st[s])


def _resolve_op(name) -> tuple[str, int, int | None]:
    """Normalize a mnemonic; unknown ones become UNKNOWN with their raw byte."""
    text = str(name)
    info = ops.lookup(text)
    if info is not None:
        return info.name, info.code, None
    raw = None
    for tok in text.replace(",", " ").split():
        if tok.lower().startswith("0x"):
            try:
                raw = int(tok, 16)
            except ValueError:
                pass
    return ops.UNKNOWN, raw if raw is not None else 0xFE, raw


def _finalize(header, rows, logs, transfers, stack_depth) -> TraceStream:
    n = len(rows)
    to = header["to"]
    stream = TraceStream(
        tx_hash=header["tx_hash"],
        chain=header["chain"],
        chain_id=header["chain_id"],
        block_number=header["block_number"],
        sender=header["sender"],
        initial_recipient=to or ZERO_ADDRESS,
        input=header["input"],
        value=header["value"],
    )
    if n == 0:
        return stream

    for row in rows:
        row["op"], row["opcode"], raw = _resolve_op(row["op"])
        if row["raw_byte"] is None:
            row["raw_byte"] = raw

    if rows[0]["depth"] != 1:
        raise DepthDiscontinuity(f"trace starts at depth {rows[0]['depth']}, expected 1")

    # frames, resume points and depth validation
    frame_of = [0] * n
    frames = [{"id": 0, "parent": None, "depth": 1, "entry": None, "first": 0, "last": 0, "status": None}]
    stack = [0]
    resume: list[int | None] = [None] * n
    pending: dict[int, int] = {}
    oog = [False] * n
    for i in range(n):
        d = rows[i]["depth"]
        if i > 0:
            prev = rows[i - 1]
            delta = d - prev["depth"]
            if abs(delta) > 1:
                raise DepthDiscontinuity(f"step {i}: depth {prev['depth']} -> {d}")
            if delta == 1:
                if prev["op"] not in ops.CONTEXT_SWITCH_OPS:
                    raise DepthDiscontinuity(f"step {i}: depth increase after {prev['op']}")
                pending[prev["depth"]] = i - 1
                frames.append(
                    {"id": len(frames), "parent": stack[-1], "depth": d, "entry": i - 1, "first": i, "last": i, "status": None}
                )
                stack.append(frames[-1]["id"])
            elif delta == -1:
                ended = frames[stack.pop()]
                ended["status"] = _halt_status(prev["op"])
                if ended["status"] == "oog":
                    oog[i - 1] = True
                call = pending.pop(d, None)
                if call is not None:
                    resume[call] = i
            else:
                resume[i - 1] = i
        frame_of[i] = stack[-1]
        frames[stack[-1]]["last"] = i
    # frames still open when the trace ends
    last_op = rows[-1]["op"]
    for fid in reversed(stack):
        if frames[fid]["status"] is None:
            frames[fid]["status"] = _halt_status(last_op) if fid == stack[-1] else "oog"
    if frames[stack[-1]]["status"] == "oog":
        oog[n - 1] = True
    for f in frames:
        parent = frames[f["parent"]] if f["parent"] is not None else None
        f["reverted"] = f["status"] != "ok" or bool(parent and parent["reverted"])

    _assign_addresses(rows, frames, frame_of, resume, to)

    # calldata side table, keyed by digest for large inputs
    recorded: list[RecordedStep] = []
    for i, row in enumerate(rows):
        op = row["op"]
        info = ops.OPCODES.get(op)
        result = None
        r = resume[i]
        if info is not None and info.pushes and r is not None and rows[r]["stack"]:
            result = rows[r]["stack"][0]
        imm = row["imm"]
        if imm is None and op.startswith("PUSH") and op != "PUSH0" and i + 1 < n and rows[i + 1]["depth"] == row["depth"]:
            if rows[i + 1]["stack"]:
                imm = rows[i + 1]["stack"][0]
        return_data = row["returndata"]
        if return_data is None and op in ops.CALL_OPS:
            if r is not None and r != i + 1:
                callee_last = rows[r - 1]
                if callee_last["op"] in ("RETURN", "REVERT"):
                    return_data = callee_last["mem"]
                else:
                    return_data = b""
            elif r == i + 1:
                return_data = b""
        fid = frame_of[i]
        step = TraceStep(
            pc=row["pc"],
            op=op,
            opcode=row["opcode"],
            depth=row["depth"],
            gas=row["gas"],
            stack_top=tuple(row["stack"][:stack_depth]),
            memory_slice=row["mem"],
            context_address=row["address"],
            code_address=row["code_address"],
            immediate=imm,
            result=result,
            return_data=return_data,
            frame=fid,
            frame_status=frames[fid]["status"],
            partial=oog[i],
            raw_byte=row["raw_byte"],
        )
        category = classify_opcode(op)
        try:
            rs = record_step(step, category)
        except InsufficientStack:
            last_in_frame = i == frames[fid]["last"]
            if not (last_in_frame or oog[i] or i == n - 1):
                raise
            step = replace(step, partial=True)
            rs = RecordedStep(step, category, (("partial", b""),))
        recorded.append(rs)
        if op in ops.CONTEXT_SWITCH_OPS and row["mem"] is not None and len(row["mem"]) > LARGE_CALLDATA:
            stream.calldata_table["0x" + keccak(row["mem"]).hex()] = row["mem"]

    stream.steps = recorded
    stream.frames = [
        Frame(f["id"], f["parent"], f["depth"], f["entry"], f["first"], f["last"], f["status"], f["reverted"])
        for f in frames
    ]
    if stream.initial_recipient == ZERO_ADDRESS:
        stream.initial_recipient = recorded[0].step.code_address
    stream.logs = _collect_logs(stream, logs)
    stream.value_transfers = _collect_transfers(stream, transfers)
    return stream


def _halt_status(op: str) -> str:
    if op in ("STOP", "RETURN", "SELFDESTRUCT"):
        return "ok"
    if op in ("REVERT", "INVALID", ops.UNKNOWN):
        return "reverted"
    return "oog"


def _assign_addresses(rows, frames, frame_of, resume, to) -> None:
    """Fill per-step storage/code addresses where the format omits them."""
    if all(r["address"] is not None for r in rows):
        for r in rows:
            if r["code_address"] is None:
                r["code_address"] = r["address"]
        return
    storage: dict[int, str] = {}
    code: dict[int, str] = {}
    root = to or ZERO_ADDRESS
    for f in frames:
        fid = f["id"]
        if f["entry"] is None:
            storage[fid], code[fid] = root, root
            continue
        call = rows[f["entry"]]
        parent = f["parent"]
        op = call["op"]
        st = call["stack"]
        if op in ("CALL", "STATICCALL"):
            storage[fid] = code[fid] = norm_address(st[1])
        elif op in ("DELEGATECALL", "CALLCODE"):
            storage[fid], code[fid] = storage[parent], norm_address(st[1])
        else:  # CREATE / CREATE2: the new address is pushed when the frame returns
            r = resume[f["entry"]]
            created = rows[r]["stack"][0] if r is not None and rows[r]["stack"] else 0
            if not created and op == "CREATE2" and call["mem"] is not None and len(st) > 3:
                # a failed CREATE2 still has a well-defined target address
                preimage = b"\xff" + bytes.fromhex(storage[parent][2:]) + st[3].to_bytes(32, "big")
                created = int.from_bytes(keccak(preimage + keccak(call["mem"]))[12:], "big")
            storage[fid] = code[fid] = norm_address(created)
    for i, r in enumerate(rows):
        fid = frame_of[i]
        if r["address"] is None:
            r["address"] = storage[fid]
        if r["code_address"] is None:
            r["code_address"] = code[fid] if r["address"] == storage[fid] else r["address"]


def _collect_logs(stream: TraceStream, explicit) -> list[LogEntry]:
    out = []
    steps = stream.steps
    if explicit is not None:
        for lg in explicit:
            idx = lg["step"]
            rev = stream.frames[steps[idx].step.frame].reverted if 0 <= idx < len(steps) else False
            out.append(LogEntry(idx, lg["address"], lg["topics"], lg["data"], rev))
        return out
    for i, rs in enumerate(steps):
        s = rs.step
        if not s.op.startswith("LOG") or s.partial:
            continue
        ntopics = int(s.op[3:])
        if len(s.stack_top) < 2 + ntopics:
            continue
        topics = tuple(s.stack_top[2 : 2 + ntopics])
        out.append(LogEntry(i, s.context_address, topics, s.memory_slice or b"", stream.frames[s.frame].reverted))
    return out


def _collect_transfers(stream: TraceStream, explicit) -> list[ValueTransfer]:
    out = []
    steps = stream.steps
    if stream.value:
        out.append(ValueTransfer(0, stream.sender, stream.initial_recipient, stream.value, "TX",
                                 stream.frames[0].reverted if stream.frames else False))
    if explicit is not None:
        for t in explicit:
            idx = t["step"]
            rev = stream.frames[steps[idx].step.frame].reverted if 0 <= idx < len(steps) else False
            out.append(ValueTransfer(idx, t["from"], t["to"], t["value"], t["op"], rev))
        return out
    for i, rs in enumerate(steps):
        s = rs.step
        if s.op in ("CALL", "CALLCODE") and len(s.stack_top) >= 3 and s.stack_top[2] and s.result:
            target = norm_address(s.stack_top[1])
            recipient = target if s.op == "CALL" else s.context_address
            if recipient != s.context_address:
                out.append(ValueTransfer(i, s.context_address, recipient, s.stack_top[2], s.op,
                                         stream.frames[s.frame].reverted))
        elif s.op in ops.CREATE_OPS and s.stack_top and s.stack_top[0] and s.result:
            out.append(ValueTransfer(i, s.context_address, norm_address(s.result), s.stack_top[0], s.op,
                                     stream.frames[s.frame].reverted))
    return out


def iter_steps(stream: TraceStream, indices: Iterable[int]):
    for i in indices:
        yield i, stream.steps[i]
