"""Dual decompiler: replay a function's trace symbolically and concretely.

Every stack word is a :class:`PairedValue` holding the expression that built it
and the value the trace says it had. Calldata, storage reads, call results and
other recorded values are bound as constants or named leaves, so the only
branches that survive are those whose condition depends on something the
attacker did not fix in advance. The output is a list of :class:`PseudoStmt`
along the single executed path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from . import opcodes as ops
from .errors import LiftTimeout, UnboundValue
from .expr import (
    Blob,
    CallResult,
    Const,
    Created,
    Env,
    Expr,
    Op,
    PairedValue,
    ReturnData,
    Storage,
    Unknown,
    as_bool,
    leaves,
    mk,
    negate,
)
from .hexutil import keccak
from .ingest import RecordedStep
from .memory import ConcreteMemoryMap
from .scope import FunctionTrace
from .selectors import SelectorDB, Signature
from .semantics import PURE_OPS, evaluate as eval_op

STMT_KINDS = frozenset(
    {"assign", "mem_write", "external_call", "static_call", "delegate_call", "create",
     "if_taken", "loop", "log", "return", "revert"}
)

CALL_KIND = {"CALL": "external_call", "CALLCODE": "external_call", "STATICCALL": "static_call",
             "DELEGATECALL": "delegate_call"}

ENV_OPS = frozenset(
    {"ADDRESS", "ORIGIN", "CALLER", "CALLVALUE", "CALLDATASIZE", "CODESIZE", "GASPRICE",
     "RETURNDATASIZE", "COINBASE", "TIMESTAMP", "NUMBER", "PREVRANDAO", "GASLIMIT", "CHAINID",
     "SELFBALANCE", "BASEFEE", "BLOBBASEFEE", "MSIZE", "GAS"}
)
# unary ops whose result comes from the outside world
EXT_UNARY = frozenset({"EXTCODESIZE", "EXTCODEHASH", "BALANCE", "BLOCKHASH", "BLOBHASH"})

# guards whose symbolic inputs are only these are boilerplate checks
ELIDABLE = frozenset({"CALLDATASIZE", "CALLVALUE", "RETURNDATASIZE", "EXTCODESIZE", "success"})

TIME_CHECK_EVERY = 4096


@dataclass(frozen=True)
class AbiArg:
    """One decoded call argument. ``items`` is set for dynamic types."""

    type: str
    value: PairedValue | None = None
    items: tuple = ()
    length: int = 0


@dataclass
class PseudoStmt:
    kind: str
    step: int
    pc: int
    operands: tuple = ()
    info: dict = field(default_factory=dict)
    children: list = field(default_factory=list)

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()


def walk(stmts):
    for s in stmts:
        yield from s.walk()


def leaf_kind(e: Expr) -> str:
    if isinstance(e, Env):
        return e.name
    if isinstance(e, Op):
        return e.name
    if isinstance(e, CallResult):
        return "success"
    return type(e).__name__


def is_boilerplate(cond: Expr) -> bool:
    kinds = {leaf_kind(x) for x in leaves(cond)}
    return bool(kinds) and kinds <= ELIDABLE


def is_dynamic(t: str) -> bool:
    return t in ("bytes", "string") or t.endswith("[]")


def infer_types(data: bytes) -> tuple[str, ...]:
    """Guess argument types of calldata without a known signature.

    A head word that points at a well-formed length-prefixed tail is taken as
    ``bytes``; other words become ``address`` or ``uint256`` by value range.
    """
    from .hexutil import looks_like_address

    body = data[4:]
    n = len(body) // 32
    words = [int.from_bytes(body[32 * i : 32 * i + 32], "big") for i in range(n)]
    types: list[str] = []
    heads_end = n * 32
    i = 0
    while i * 32 < heads_end:
        w = words[i]
        if w % 32 == 0 and (i + 1) * 32 <= w < len(body) - 31:
            length = words[w // 32]
            if w + 32 + -(-length // 32) * 32 <= len(body):
                types.append("bytes")
                heads_end = min(heads_end, w)
                i += 1
                continue
        types.append("address" if looks_like_address(w) else "uint256")
        i += 1
    return tuple(types)


class VarMap:
    """Single-assignment bindings; reads see the newest version of a name."""

    def __init__(self):
        self.versions: dict[str, list[PairedValue]] = {}

    def bind(self, name: str, value: PairedValue) -> int:
        vs = self.versions.setdefault(name, [])
        vs.append(value)
        return len(vs)

    def read(self, name: str) -> PairedValue:
        return self.versions[name][-1]


class _Frame:
    """Per-invocation machine state."""

    def __init__(self, frame: int, top: list):
        self.frame = frame
        self.stack: list[PairedValue] = []
        self.mem = ConcreteMemoryMap()
        self.out = top
        self.last_call: int | None = None
        self.returndata = b""


class Lifter:
    def __init__(self, *, minimal: bool = False, selectors: SelectorDB | None = None,
                 budget: float | None = None):
        self.minimal = minimal
        self.selectors = selectors if selectors is not None else SelectorDB.builtin()
        self.budget = budget
        self.vars = VarMap()
        self.calls = 0

    # -- stack helpers --------------------------------------------------------

    def _pop(self, fr: _Frame, rs: RecordedStep, k: int, index: int) -> PairedValue:
        if fr.stack:
            return fr.stack.pop()
        top = rs.step.stack_top
        return PairedValue(Unknown(index), top[k] if k < len(top) else None, index)

    def _pops(self, fr: _Frame, rs: RecordedStep, n: int, index: int) -> list[PairedValue]:
        return [self._pop(fr, rs, k, index) for k in range(n)]

    # -- main loop --------------------------------------------------------------

    def lift(self, ft: FunctionTrace, steps: list[RecordedStep] | None = None) -> list[PseudoStmt]:
        """Lift every invocation recorded in ``ft``, in order."""
        out: list[PseudoStmt] = []
        start = time.monotonic()
        fr: _Frame | None = None
        by_index = dict(zip(ft.step_indices, ft.bound_values)) if steps is None else None
        n = 0
        for block in ft.blocks:
            if fr is None or block.frame != fr.frame:
                fr = _Frame(block.frame, out)
            for i in block.indices():
                rs = by_index[i] if by_index is not None else steps[i]
                self._step(fr, rs, i)
                n += 1
                if self.budget is not None and n % TIME_CHECK_EVERY == 0:
                    if time.monotonic() - start > self.budget:
                        raise LiftTimeout(f"lifting exceeded {self.budget}s after {n} steps")
        return out

    def _emit(self, fr: _Frame, stmt: PseudoStmt) -> PseudoStmt:
        fr.out.append(stmt)
        return stmt

    def _step(self, fr: _Frame, rs: RecordedStep, idx: int) -> None:
        st = rs.step
        op = st.op
        push = fr.stack.append

        if ops.is_push(op):
            imm = rs.value("imm")
            if imm is None:
                raise UnboundValue(f"{op} at step {idx} has no recorded immediate")
            push(PairedValue(Const(imm), imm, idx))
            return
        if op.startswith("DUP"):
            n = int(op[3:])
            if len(fr.stack) >= n:
                push(fr.stack[-n])
            else:
                top = st.stack_top
                push(PairedValue(Unknown(idx), top[n - 1] if len(top) >= n else None, idx))
            return
        if op.startswith("SWAP"):
            n = int(op[4:])
            while len(fr.stack) < n + 1:
                k = len(fr.stack)
                top = st.stack_top
                fr.stack.insert(0, PairedValue(Unknown(idx), top[k] if len(top) > k else None, idx))
            fr.stack[-1], fr.stack[-1 - n] = fr.stack[-1 - n], fr.stack[-1]
            return
        if op in ("POP", "JUMPDEST"):
            if op == "POP":
                self._pop(fr, rs, 0, idx)
            return
        if op in PURE_OPS:
            info = ops.lookup(op)
            args = self._pops(fr, rs, info.pops, idx)
            concretes = [a.word for a in args]
            value = eval_op(op, concretes) if all(c is not None for c in concretes) else st.result
            push(PairedValue(mk(op, *(a.expr for a in args)), value, idx))
            return
        if op in ENV_OPS:
            value = rs.value("result", st.result)
            if value is None and op == "ADDRESS":
                value = int(st.context_address, 16)
            push(PairedValue(Env(op), value, idx))
            return
        if op == "PC":
            push(PairedValue(Const(st.pc), st.pc, idx))
            return
        if op in EXT_UNARY:
            (a,) = self._pops(fr, rs, 1, idx)
            push(PairedValue(Op(op, (a.expr,)), rs.value("result", st.result), idx))
            return
        if op == "CALLDATALOAD":
            self._pop(fr, rs, 0, idx)
            value = rs.value("result")
            if value is None:
                raise UnboundValue(f"CALLDATALOAD at step {idx} has no recorded result")
            push(PairedValue(Const(value), value, idx))
            return
        if op in ("SLOAD", "TLOAD"):
            (slot,) = self._pops(fr, rs, 1, idx)
            value = rs.value("result")
            if value is None:
                raise UnboundValue(f"{op} at step {idx} has no recorded result")
            pv = PairedValue(Storage(slot.expr, op == "TLOAD"), value, idx)
            self._assign(fr, "s", pv, st, idx)
            push(pv)
            return
        if op in ("SSTORE", "TSTORE"):
            slot, value = self._pops(fr, rs, 2, idx)
            self._emit(fr, PseudoStmt("assign", idx, st.pc, (slot, value),
                                      {"target": "transient" if op == "TSTORE" else "storage"}))
            return
        if op == "MLOAD":
            (off,) = self._pops(fr, rs, 1, idx)
            pv = fr.mem.read(off.word, 32, idx)
            self._assign(fr, "m", pv, st, idx)
            push(pv)
            return
        if op in ("MSTORE", "MSTORE8"):
            off, value = self._pops(fr, rs, 2, idx)
            size = 32 if op == "MSTORE" else 1
            fr.mem.write(off.word, value, size)
            self._emit(fr, PseudoStmt("mem_write", idx, st.pc, (off, value), {"size": size}))
            return
        if op == "MCOPY":
            dst, src, size = self._pops(fr, rs, 3, idx)
            fr.mem.copy(dst.word, src.word, size.word)
            self._emit(fr, PseudoStmt("mem_write", idx, st.pc, (dst, src), {"size": size.word, "copy": True}))
            return
        if op in ("CALLDATACOPY", "CODECOPY", "RETURNDATACOPY", "EXTCODECOPY"):
            self._copy(fr, rs, idx)
            return
        if op == "SHA3":
            off, size = self._pops(fr, rs, 2, idx)
            region = fr.mem.read(off.word, size.word, idx)
            data = region.concrete if isinstance(region.concrete, bytes) else region.word.to_bytes(32, "big")
            digest = int.from_bytes(keccak(data), "big")
            pv = PairedValue(Op("SHA3", (region.expr,)), digest, idx)
            self._assign(fr, "h", pv, st, idx)
            push(pv)
            return
        if op == "JUMP":
            self._pop(fr, rs, 0, idx)
            return
        if op == "JUMPI":
            self._jumpi(fr, rs, idx)
            return
        if op.startswith("LOG"):
            n = int(op[3:])
            off, size, *topics = self._pops(fr, rs, 2 + n, idx)
            data = fr.mem.read(off.word, size.word, idx)
            self._emit(fr, PseudoStmt("log", idx, st.pc, (data, *topics), {}))
            return
        if op in CALL_KIND:
            self._call(fr, rs, idx)
            return
        if op in ops.CREATE_OPS:
            self._create(fr, rs, idx)
            return
        if op in ("RETURN", "REVERT"):
            off, size = self._pops(fr, rs, 2, idx)
            data = fr.mem.read(off.word, size.word, idx)
            kind = "return" if op == "RETURN" else "revert"
            self._emit(fr, PseudoStmt(kind, idx, st.pc, (data,), {"op": op}))
            return
        if op == "STOP":
            self._emit(fr, PseudoStmt("return", idx, st.pc, (), {"op": op}))
            return
        if op == "SELFDESTRUCT":
            (who,) = self._pops(fr, rs, 1, idx)
            self._emit(fr, PseudoStmt("return", idx, st.pc, (who,), {"op": op}))
            return
        if op == "INVALID":
            self._emit(fr, PseudoStmt("revert", idx, st.pc, (), {"op": op}))
            return
        # unknown or unmodelled opcode: keep the stack height right at least
        info = ops.lookup(op)
        if info is not None:
            self._pops(fr, rs, info.pops, idx)
            for k in range(info.pushes):
                push(PairedValue(Unknown(idx), st.result, idx))

    # -- handlers ----------------------------------------------------------------

    def _assign(self, fr: _Frame, name: str, pv: PairedValue, st, idx: int) -> None:
        version = self.vars.bind(name, pv)
        self._emit(fr, PseudoStmt("assign", idx, st.pc, (pv,), {"var": name, "version": version}))

    def _copy(self, fr: _Frame, rs: RecordedStep, idx: int) -> None:
        st = rs.step
        if st.op == "EXTCODECOPY":
            addr, dst, off, size = self._pops(fr, rs, 4, idx)
        else:
            dst, off, size = self._pops(fr, rs, 3, idx)
        n = size.word
        data = rs.value("data")
        if st.op == "RETURNDATACOPY":
            if data is None:
                data = fr.returndata[off.word : off.word + n].ljust(n, b"\x00")
            expr = ReturnData(fr.last_call if fr.last_call is not None else -1, off.word, n)
        else:
            if data is None:
                if n == 0:
                    data = b""
                else:
                    raise UnboundValue(f"{st.op} at step {idx} has no recorded data")
            expr = Const(int.from_bytes(data, "big")) if n == 32 else Blob(bytes(data))
        data = bytes(data)[:n].ljust(n, b"\x00")
        value = PairedValue(expr, data, idx)
        fr.mem.write(dst.word, value, n)
        self._emit(fr, PseudoStmt("mem_write", idx, st.pc, (dst, value), {"size": n}))

    def _jumpi(self, fr: _Frame, rs: RecordedStep, idx: int) -> None:
        st = rs.step
        _dest, cond = self._pops(fr, rs, 2, idx)
        recorded = rs.value("cond")
        if recorded is None:
            recorded = cond.word
        if recorded is None:
            raise UnboundValue(f"JUMPI at step {idx} has no recorded condition")
        taken = recorded != 0
        expr = as_bool(cond.expr) if taken else negate(cond.expr)
        if isinstance(expr, Const) or not list(leaves(expr)):
            return
        if self.minimal and is_boilerplate(expr):
            return
        stmt = PseudoStmt("if_taken", idx, st.pc, (PairedValue(expr, 1, idx),), {"taken": taken})
        self._emit(fr, stmt)
        fr.out = stmt.children

    def _call(self, fr: _Frame, rs: RecordedStep, idx: int) -> None:
        st = rs.step
        op = st.op
        if op in ("CALL", "CALLCODE"):
            _gas, target, value, a_off, a_len, r_off, r_len = self._pops(fr, rs, 7, idx)
        else:
            _gas, target, a_off, a_len, r_off, r_len = self._pops(fr, rs, 6, idx)
            value = PairedValue(Const(0), 0, idx)
        cid = self.calls
        self.calls += 1
        recorded_input = rs.value("input")
        region = fr.mem.read(a_off.word, a_len.word, idx)
        data = recorded_input if recorded_input is not None else (
            region.concrete if isinstance(region.concrete, bytes) else region.word.to_bytes(32, "big"))
        sel = "0x" + bytes(data[:4]).hex() if len(data) >= 4 else None
        sig = self.selectors.lookup(sel) if sel else None
        args = self._decode(fr.mem, a_off.word, data, sig)
        success = rs.value("success", st.result)
        ok = PairedValue(CallResult(cid), success, idx)
        info = {"op": op, "call": cid, "selector": sel, "signature": sig, "args": args,
                "input": bytes(data)}
        self._emit(fr, PseudoStmt(CALL_KIND[op], idx, st.pc, (target, value, ok), info))
        rd = rs.value("return_data", st.return_data) or b""
        fr.last_call = cid
        fr.returndata = bytes(rd)
        n = min(r_len.word or 0, len(rd))
        if n:
            fr.mem.write(r_off.word, PairedValue(ReturnData(cid, 0, n), bytes(rd[:n]), idx), n)
        fr.stack.append(ok)

    def _decode(self, mem: ConcreteMemoryMap, base: int, data: bytes, sig: Signature | None) -> tuple:
        if len(data) < 4:
            return ()
        types = sig.types if sig is not None else infer_types(data)
        out = []
        head = base + 4
        end = base + len(data)
        for i, t in enumerate(types):
            pv = mem.read(head + 32 * i, 32)
            if head + 32 * i + 32 > end:
                break
            if not is_dynamic(t):
                out.append(AbiArg(t, pv))
                continue
            tail = head + pv.word
            if pv.word is None or tail + 32 > end:
                out.append(AbiArg(t, pv))
                continue
            length = mem.read(tail, 32).word
            words = -(-length // 32) if t in ("bytes", "string") else length
            if tail + 32 + 32 * words > end:
                out.append(AbiArg(t, pv))
                continue
            items = tuple(mem.read(tail + 32 + 32 * j, 32) for j in range(words))
            out.append(AbiArg(t, None, items, length))
        return tuple(out)

    def _create(self, fr: _Frame, rs: RecordedStep, idx: int) -> None:
        st = rs.step
        if st.op == "CREATE2":
            value, off, size, salt = self._pops(fr, rs, 4, idx)
        else:
            value, off, size = self._pops(fr, rs, 3, idx)
            salt = None
        cid = self.calls
        self.calls += 1
        code = fr.mem.read(off.word, size.word, idx)
        created = PairedValue(Created(cid), st.result, idx)
        info = {"op": st.op, "call": cid, "salt": salt, "initcode": code}
        self._emit(fr, PseudoStmt("create", idx, st.pc, (value, created), info))
        fr.last_call = cid
        fr.returndata = b""
        fr.stack.append(created)


def lift_function(ft: FunctionTrace, *, minimal: bool = False, selectors: SelectorDB | None = None,
                  budget: float | None = None) -> list[PseudoStmt]:
    """Lift one in-scope function trace into pseudocode statements."""
    return Lifter(minimal=minimal, selectors=selectors, budget=budget).lift(ft)


def calls_of(stmts) -> list[PseudoStmt]:
    """Every call and create statement, in execution order."""
    out = [s for s in walk(stmts) if s.kind in ("external_call", "static_call", "delegate_call", "create")]
    out.sort(key=lambda s: s.step)
    return out

