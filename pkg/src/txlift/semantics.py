"""Concrete 256-bit semantics for EVM stack arithmetic."""

from __future__ import annotations

from .hexutil import WORD, keccak, signed

M = WORD - 1


def _sdiv(a, b):
    a, b = signed(a), signed(b)
    if b == 0:
        return 0
    q = abs(a) // abs(b)
    return (-q if (a < 0) != (b < 0) else q) % WORD


def _smod(a, b):
    a, b = signed(a), signed(b)
    if b == 0:
        return 0
    r = abs(a) % abs(b)
    return (-r if a < 0 else r) % WORD


def _signextend(b, x):
    if b >= 31:
        return x
    bits = 8 * (b + 1)
    x &= (1 << bits) - 1
    if x >> (bits - 1):
        x |= M ^ ((1 << bits) - 1)
    return x


def _byte(i, x):
    return 0 if i >= 32 else (x >> (8 * (31 - i))) & 0xFF


def _sar(shift, x):
    return (signed(x) >> min(shift, 256)) % WORD


# args are in pop order: args[0] is the former top of stack
BINARY = {
    "ADD": lambda a, b: (a + b) & M,
    "MUL": lambda a, b: (a * b) & M,
    "SUB": lambda a, b: (a - b) & M,
    "DIV": lambda a, b: 0 if b == 0 else a // b,
    "SDIV": _sdiv,
    "MOD": lambda a, b: 0 if b == 0 else a % b,
    "SMOD": _smod,
    "EXP": lambda a, b: pow(a, b, WORD),
    "SIGNEXTEND": _signextend,
    "LT": lambda a, b: int(a < b),
    "GT": lambda a, b: int(a > b),
    "SLT": lambda a, b: int(signed(a) < signed(b)),
    "SGT": lambda a, b: int(signed(a) > signed(b)),
    "EQ": lambda a, b: int(a == b),
    "AND": lambda a, b: a & b,
    "OR": lambda a, b: a | b,
    "XOR": lambda a, b: a ^ b,
    "BYTE": _byte,
    "SHL": lambda s, x: (x << s) & M if s < 256 else 0,
    "SHR": lambda s, x: x >> s if s < 256 else 0,
    "SAR": _sar,
}
UNARY = {
    "ISZERO": lambda a: int(a == 0),
    "NOT": lambda a: M ^ a,
}
TERNARY = {
    "ADDMOD": lambda a, b, n: 0 if n == 0 else (a + b) % n,
    "MULMOD": lambda a, b, n: 0 if n == 0 else (a * b) % n,
}

PURE_OPS = frozenset(BINARY) | frozenset(UNARY) | frozenset(TERNARY)


def evaluate(op: str, args) -> int:
    if op in BINARY:
        return BINARY[op](args[0] % WORD, args[1] % WORD)
    if op in UNARY:
        return UNARY[op](args[0] % WORD)
    if op in TERNARY:
        return TERNARY[op](*(a % WORD for a in args))
    raise KeyError(op)


def sha3_word(data: bytes) -> int:
    return int.from_bytes(keccak(data), "big")
