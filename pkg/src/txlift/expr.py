"""Symbolic expressions paired with the concrete values seen in the trace.

Expressions are small frozen dataclass trees. Arguments of :class:`Op` are in
EVM pop order, so ``Op("SUB", (a, b))`` means ``a - b`` with ``a`` the former
stack top. Construction through :func:`mk` folds constants and applies a few
identity laws; everything else stays symbolic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Union

from .hexutil import MASK160, MASK256, keccak
from .semantics import PURE_OPS, evaluate as eval_op


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Blob:
    """A constant byte string wider than a word (copied calldata, code)."""

    data: bytes


@dataclass(frozen=True)
class Env:
    """Execution-context leaf such as CALLER or CALLDATASIZE."""

    name: str


@dataclass(frozen=True)
class Storage:
    slot: "Expr"
    transient: bool = False


@dataclass(frozen=True)
class ReturnData:
    call: int
    offset: int
    size: int


@dataclass(frozen=True)
class CallResult:
    call: int


@dataclass(frozen=True)
class Created:
    call: int


@dataclass(frozen=True)
class MemZero:
    """Never-written memory; concretely zero."""

    offset: int
    size: int


@dataclass(frozen=True)
class Unknown:
    """A stack word the lifter could not reconstruct (only the trace knows it)."""

    step: int


@dataclass(frozen=True)
class Op:
    name: str
    args: tuple


@dataclass(frozen=True)
class Slice:
    base: "Expr"
    offset: int
    size: int


@dataclass(frozen=True)
class Concat:
    parts: tuple  # of (Expr, size)


Expr = Union[Const, Blob, Env, Storage, ReturnData, CallResult, Created, MemZero, Unknown, Op, Slice, Concat]

# leaf ops whose value comes from outside the function; they stay symbolic
EXTERNAL_OPS = frozenset({"EXTCODESIZE", "EXTCODEHASH", "BALANCE", "BLOCKHASH", "SHA3"})


@dataclass(frozen=True)
class PairedValue:
    expr: Expr
    concrete: int | bytes | None
    step: int = -1

    @property
    def word(self) -> int | None:
        c = self.concrete
        if isinstance(c, (bytes, bytearray)):
            return int.from_bytes(c, "big") if c else 0
        return c


def is_const(e: Expr) -> bool:
    return isinstance(e, (Const, Blob))


def mk(name: str, *args: Expr) -> Expr:
    """Build ``name(args)``, folding constants and trivial identities."""
    if name in PURE_OPS and all(isinstance(a, Const) for a in args):
        return Const(eval_op(name, [a.value for a in args]))
    a = args[0] if args else None
    b = args[1] if len(args) > 1 else None
    if name in ("ADD", "OR", "XOR"):
        if _is(b, 0):
            return a
        if _is(a, 0):
            return b
    elif name == "SUB" and _is(b, 0):
        return a
    elif name == "MUL":
        if _is(b, 1):
            return a
        if _is(a, 1):
            return b
    elif name == "DIV" and _is(b, 1):
        return a
    elif name == "AND":
        if _is(b, MASK256):
            return a
        if _is(a, MASK256):
            return b
        # address(address(x)) == address(x)
        for x, m in ((a, b), (b, a)):
            if _is(m, MASK160) and isinstance(x, Op) and x.name == "AND" and any(_is(y, MASK160) for y in x.args):
                return x
    elif name in ("SHL", "SHR") and _is(a, 0):
        return b
    elif name == "ISZERO" and isinstance(a, Op) and a.name == "ISZERO":
        inner = a.args[0]
        if isinstance(inner, Op) and inner.name == "ISZERO":
            return inner
    return Op(name, tuple(args))


def _is(e, value: int) -> bool:
    return isinstance(e, Const) and e.value == value


def negate(e: Expr) -> Expr:
    """Logical negation, used for the condition of a not-taken JUMPI."""
    if isinstance(e, Op) and e.name == "ISZERO":
        return as_bool(e.args[0])
    return mk("ISZERO", e)


def as_bool(e: Expr) -> Expr:
    """Strip double negations that only normalize a value to 0/1."""
    while isinstance(e, Op) and e.name == "ISZERO":
        inner = e.args[0]
        if isinstance(inner, Op) and inner.name == "ISZERO":
            e = inner.args[0]
        else:
            break
    return e


def children(e: Expr) -> Iterator[Expr]:
    if isinstance(e, Op):
        yield from e.args
    elif isinstance(e, Storage):
        yield e.slot
    elif isinstance(e, Slice):
        yield e.base
    elif isinstance(e, Concat):
        for part, _ in e.parts:
            yield part


def leaves(e: Expr) -> Iterator[Expr]:
    """Symbolic leaves of ``e`` (constants excluded).

    Applications of external-context opcodes count as leaves themselves.
    """
    if isinstance(e, (Const, Blob)):
        return
    if isinstance(e, Op) and e.name in EXTERNAL_OPS:
        yield e
        return
    if isinstance(e, (Op, Slice, Concat)):
        for c in children(e):
            yield from leaves(c)
        return
    yield e


def evaluate(e: Expr) -> int | None:
    """Value of ``e`` if it contains no symbolic leaves, else None."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Op):
        if e.name == "SHA3":
            data = concrete_bytes(e.args[0])
            return None if data is None else int.from_bytes(keccak(data), "big")
        if e.name not in PURE_OPS:
            return None
        vals = [evaluate(a) for a in e.args]
        if any(v is None for v in vals):
            return None
        return eval_op(e.name, vals)
    if isinstance(e, (Blob, Slice, Concat)):
        data = concrete_bytes(e)
        return None if data is None else int.from_bytes(data, "big") if data else 0
    return None


def width(e: Expr) -> int:
    """Byte width of a value expression; words are 32 bytes."""
    if isinstance(e, Blob):
        return len(e.data)
    if isinstance(e, Slice):
        return e.size
    if isinstance(e, Concat):
        return sum(size for _, size in e.parts)
    if isinstance(e, ReturnData):
        return e.size
    if isinstance(e, MemZero):
        return e.size
    return 32


def concrete_bytes(e: Expr) -> bytes | None:
    """Big-endian bytes of ``e`` at its natural width, or None if symbolic."""
    if isinstance(e, Blob):
        return e.data
    if isinstance(e, Concat):
        out = b""
        for part, size in e.parts:
            b = concrete_bytes(part)
            if b is None:
                return None
            out += _fit(b, size)
        return out
    if isinstance(e, Slice):
        base = concrete_bytes(e.base)
        return None if base is None else base[e.offset : e.offset + e.size]
    v = evaluate(e)
    return None if v is None else v.to_bytes(32, "big")


def _fit(b: bytes, size: int) -> bytes:
    return b[-size:] if len(b) >= size else b.rjust(size, b"\x00")
