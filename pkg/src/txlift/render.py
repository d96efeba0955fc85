"""Text rendering of lifted expressions and statements."""

from __future__ import annotations

from typing import Callable

from .expr import (
    Blob,
    CallResult,
    Concat,
    Const,
    Created,
    Env,
    Expr,
    MemZero,
    Op,
    ReturnData,
    Slice,
    Storage,
    Unknown,
)
from .hexutil import MASK160, MASK256, checksum, looks_like_address

ENV_NAMES = {
    "ADDRESS": "address(this)",
    "ORIGIN": "tx.origin",
    "CALLER": "msg.sender",
    "CALLVALUE": "msg.value",
    "CALLDATASIZE": "msg.data.length",
    "CODESIZE": "codesize()",
    "GASPRICE": "tx.gasprice",
    "RETURNDATASIZE": "returndatasize()",
    "COINBASE": "block.coinbase",
    "TIMESTAMP": "block.timestamp",
    "NUMBER": "block.number",
    "PREVRANDAO": "block.prevrandao",
    "GASLIMIT": "block.gaslimit",
    "CHAINID": "block.chainid",
    "SELFBALANCE": "address(this).balance",
    "BASEFEE": "block.basefee",
    "BLOBBASEFEE": "block.blobbasefee",
    "MSIZE": "msize()",
    "GAS": "gasleft()",
}

BINOPS = {
    "ADD": "+", "SUB": "-", "MUL": "*", "DIV": "/", "SDIV": "/", "MOD": "%", "SMOD": "%",
    "EXP": "**", "AND": "&", "OR": "|", "XOR": "^", "SHL": "<<", "SHR": ">>", "SAR": ">>",
    "LT": "<", "GT": ">", "SLT": "<", "SGT": ">", "EQ": "==",
}
# shift ops take the shift amount first: SHL(s, x) is x << s
SHIFTS = frozenset({"SHL", "SHR", "SAR"})
NEGATED = {"LT": ">=", "GT": "<=", "SLT": ">=", "SGT": "<=", "EQ": "!="}
EXT_CALLS = {"EXTCODESIZE": "{}.code.length", "EXTCODEHASH": "{}.codehash", "BALANCE": "{}.balance",
             "BLOCKHASH": "blockhash({})", "BLOBHASH": "blobhash({})"}

ETHER = 10**18


def render_const(v) -> str:
    if not isinstance(v, int):
        return str(v)  # placeholders inside loop templates
    if v == MASK256:
        return "type(uint256).max"
    if looks_like_address(v):
        return checksum(hex(v))
    if v >= ETHER and v % (ETHER // 100) == 0:
        whole, frac = divmod(v, ETHER)
        return f"{whole} * 10^18" if frac == 0 else f"{v / ETHER:g} * 10^18"
    if v >= 2**64:
        return hex(v)
    return str(v)


class ExprRenderer:
    def __init__(self, aliases: dict[str, str] | None = None, rename: Callable[[Expr], str | None] | None = None):
        self.aliases = {k.lower(): v for k, v in (aliases or {}).items()}
        self.rename = rename

    def const(self, v) -> str:
        if isinstance(v, int) and looks_like_address(v):
            alias = self.aliases.get("0x" + (v & MASK160).to_bytes(20, "big").hex())
            if alias:
                return alias
        return render_const(v)

    def __call__(self, e: Expr) -> str:
        return self.expr(e)

    def expr(self, e: Expr, parent: bool = False) -> str:
        if self.rename is not None:
            r = self.rename(e)
            if r is not None:
                return r
        if isinstance(e, Const):
            return self.const(e.value)
        if isinstance(e, Blob):
            if not isinstance(e.data, bytes):
                return str(e.data)
            return "0x" + e.data.hex() if e.data else '""'
        if isinstance(e, Env):
            return ENV_NAMES.get(e.name, e.name.lower() + "()")
        if isinstance(e, Storage):
            return f"{'TSTORAGE' if e.transient else 'STORAGE'}[{self.expr(e.slot)}]"
        if isinstance(e, ReturnData):
            if isinstance(e.offset, int) and e.offset % 32 == 0 and e.size == 32:
                return f"ext_call.return_data[{e.offset // 32}]"
            return f"ext_call.return_data[{e.offset}:{_add(e.offset, e.size)}]"
        if isinstance(e, CallResult):
            return "ext_call.success"
        if isinstance(e, Created):
            return "new_contract"
        if isinstance(e, MemZero):
            return "MEM0"
        if isinstance(e, Unknown):
            return "unknown"
        if isinstance(e, Slice):
            return f"bytes{e.size}({self.expr(e.base)}[{e.offset}:])"
        if isinstance(e, Concat):
            return "concat(" + ", ".join(self.expr(p) for p, _ in e.parts) + ")"
        if isinstance(e, Op):
            return self.op(e, parent)
        return repr(e)

    def op(self, e: Op, parent: bool) -> str:
        a = e.args
        if e.name == "AND" and len(a) == 2:
            for x, m in ((a[0], a[1]), (a[1], a[0])):
                if isinstance(m, Const) and m.value == MASK160:
                    return f"address({self.expr(x)})"
        if e.name == "ISZERO":
            return self.cond(e, parent)
        if e.name == "NOT":
            return f"~{self.expr(a[0], True)}"
        if e.name == "SHA3":
            inner = a[0]
            parts = [p for p, _ in inner.parts] if isinstance(inner, Concat) else [inner]
            return "keccak256(" + ", ".join(self.expr(p) for p in parts) + ")"
        if e.name in EXT_CALLS:
            return EXT_CALLS[e.name].format(self.expr(a[0], True))
        if e.name in BINOPS and len(a) == 2:
            x, y = (a[1], a[0]) if e.name in SHIFTS else (a[0], a[1])
            s = f"{self.expr(x, True)} {BINOPS[e.name]} {self.expr(y, True)}"
            return f"({s})" if parent else s
        return f"{e.name.lower()}(" + ", ".join(self.expr(x) for x in a) + ")"

    def cond(self, e: Expr, parent: bool = False) -> str:
        """Render ``e`` in boolean position."""
        s = self._cond(e)
        return f"({s})" if parent and " " in s else s

    def _cond(self, e: Expr) -> str:
        if isinstance(e, Op):
            if e.name == "ISZERO":
                inner = e.args[0]
                if isinstance(inner, Op):
                    if inner.name in NEGATED:
                        x, y = inner.args
                        return f"{self.expr(x, True)} {NEGATED[inner.name]} {self.expr(y, True)}"
                    if inner.name == "SUB":
                        x, y = inner.args
                        return f"{self.expr(x, True)} == {self.expr(y, True)}"
                    if inner.name == "ISZERO":
                        return self._cond(inner.args[0])
                if isinstance(inner, CallResult):
                    return "!ext_call.success"
                return f"{self.expr(inner, True)} == 0"
            if e.name in NEGATED:
                return self.expr(e)
            if e.name == "SUB":
                x, y = e.args
                return f"{self.expr(x, True)} != {self.expr(y, True)}"
        if isinstance(e, CallResult):
            return "ext_call.success"
        return f"{self.expr(e, True)} != 0"


def _add(a, b):
    return a + b if isinstance(a, int) and isinstance(b, int) else f"{a}+{b}"


CALL_WORDS = {"CALL": "call", "CALLCODE": "callcode", "STATICCALL": "static call", "DELEGATECALL": "delegate call"}
INDENT = "  "


def declaration(info: dict) -> str:
    sig = info.get("signature")
    if sig is not None:
        return sig.declaration()
    sel = info.get("selector")
    if sel is None:
        return ""
    types = [a.type for a in info.get("args", ())]
    return f"func_{str(sel).removeprefix('0x')}({', '.join(types)})"


def is_visible(stmt, show_all: bool = False) -> bool:
    if show_all:
        return True
    if stmt.kind == "mem_write":
        return False
    if stmt.kind == "assign" and "var" in stmt.info:
        return False
    if stmt.kind == "return" and stmt.info.get("op") == "STOP":
        return False
    if stmt.kind == "return" and stmt.operands and _empty(stmt.operands[0]):
        return False
    return True


def _empty(pv) -> bool:
    c = getattr(pv, "concrete", None)
    return isinstance(c, (bytes, bytearray)) and len(c) == 0


class StmtRenderer:
    """Pseudocode lines for a statement list.

    Bookkeeping statements (memory writes and temporaries) are hidden unless
    ``show_all`` is set.
    """

    def __init__(self, aliases: dict[str, str] | None = None, show_all: bool = False, exprs: ExprRenderer | None = None):
        self.e = exprs or ExprRenderer(aliases)
        self.show_all = show_all

    def render(self, stmts) -> str:
        lines: list[str] = []
        self.lines(stmts, 0, lines)
        return "\n".join(lines)

    def lines(self, stmts, depth: int, out: list[str]) -> None:
        for s in stmts:
            if is_visible(s, self.show_all):
                self.stmt(s, depth, out)

    def visible_children(self, s) -> list:
        return [c for c in s.children if is_visible(c, self.show_all)]

    def arg(self, a) -> str:
        if a.items or a.value is None:
            vals = [self.e(pv.expr) for pv in a.items]
            if a.type.endswith("[]"):
                return "[" + ", ".join(vals) + "]"
            if not isinstance(a.length, int) or a.length % 32 == 0:
                return "abi.encode(" + ", ".join(vals) + ")"
            return f"bytes{a.length}(abi.encode(" + ", ".join(vals) + "))"
        return self.e(a.value.expr)

    def stmt(self, s, depth: int, out: list[str]) -> None:
        pad = INDENT * depth
        e = self.e
        k = s.kind
        if k == "if_taken":
            cond = e.cond(s.operands[0].expr)
            body = self.visible_children(s)
            if not body:
                out.append(f"{pad}require({cond})")
                return
            out.append(f"{pad}if {cond}:")
            self.lines(s.children, depth + 1, out)
        elif k in ("external_call", "static_call", "delegate_call"):
            self.call(s, pad, out)
        elif k == "create":
            value, created = s.operands[:2]
            salt = s.info.get("salt")
            code = s.info.get("initcode")
            size = len(code.concrete) if code is not None and isinstance(code.concrete, (bytes, bytearray)) else 0
            word = "create2" if salt is not None else "create"
            extra = [f"{INDENT}initcode {size} bytes"]
            if salt is not None:
                extra.append(f"{INDENT}salt {e(salt.expr)}")
            if value.word:
                extra.append(f"{INDENT}value {e(value.expr)}")
            out.append(f"{pad}new_contract = {word} with:")
            out.extend(pad + x for x in extra)
        elif k == "assign":
            if "var" in s.info:
                out.append(f"{pad}{s.info['var']}_{s.info['version']} = {e(s.operands[0].expr)}")
            else:
                name = "TSTORAGE" if s.info.get("target") == "transient" else "STORAGE"
                slot, value = s.operands
                out.append(f"{pad}{name}[{e(slot.expr)}] = {e(value.expr)}")
        elif k == "mem_write":
            off, value = s.operands
            if s.info.get("copy"):
                out.append(f"{pad}MEM[{e(off.expr)}:+{s.info['size']}] = MEM[{e(value.expr)}:]")
            else:
                out.append(f"{pad}MEM[{e(off.expr)}:+{s.info['size']}] = {e(value.expr)}")
        elif k == "log":
            data, *topics = s.operands
            parts = [e(t.expr) for t in topics]
            if not _empty(data):
                parts.append(e(data.expr))
            out.append(f"{pad}emit log{len(topics)}({', '.join(parts)})")
        elif k == "return":
            op = s.info.get("op")
            if op == "SELFDESTRUCT":
                out.append(f"{pad}selfdestruct({e(s.operands[0].expr)})")
            elif op == "STOP" or not s.operands:
                out.append(f"{pad}stop")
            else:
                out.append(f"{pad}return {e(s.operands[0].expr)}")
        elif k == "revert":
            if s.operands and not _empty(s.operands[0]):
                out.append(f"{pad}revert({e(s.operands[0].expr)})")
            else:
                out.append(f"{pad}revert()")
        elif k == "loop":
            self.loop(s, depth, out)
        else:
            out.append(f"{pad}{k}")

    def call(self, s, pad: str, out: list[str]) -> None:
        e = self.e
        target, value, _ok = s.operands
        word = CALL_WORDS.get(s.info.get("op"), "call")
        decl = declaration(s.info)
        head = f"{pad}{word} [{e(target.expr)}]" + (f".{decl}" if decl else "")
        extra = []
        if value.word or (value.word is None and not isinstance(value.expr, Const)):
            extra.append(f"value {e(value.expr)}")
        args = s.info.get("args", ())
        if args:
            extra.append("args " + ", ".join(self.arg(a) for a in args))
        if not extra:
            out.append(head)
            return
        out.append(head + " with:")
        out.extend(f"{pad}{INDENT}{x}" for x in extra)

    def loop(self, s, depth: int, out: list[str]) -> None:
        # loops come from the compressor, whose template renders its own body
        template = s.info.get("template")
        if template is not None:
            template.render_into(self, depth, out)
            return
        out.append(f"{INDENT * depth}for i in 0..{s.info['count']}:")
        self.lines(s.children, depth + 1, out)


def render_pseudocode(stmts, aliases: dict[str, str] | None = None, show_all: bool = False) -> str:
    return StmtRenderer(aliases, show_all).render(stmts)
