"""Function signature lookup by 4-byte selector."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .hexutil import selector as selector_of


@dataclass(frozen=True)
class Signature:
    name: str
    types: tuple[str, ...]
    params: tuple[str, ...]  # parameter names, "" when unknown

    @property
    def canonical(self) -> str:
        return f"{self.name}({','.join(self.types)})"

    @property
    def selector(self) -> str:
        return selector_of(self.canonical)

    def declaration(self) -> str:
        """``name(type a, type b)``, dropping names that are unknown."""
        parts = [f"{t} {n}".strip() for t, n in zip(self.types, self.params)]
        return f"{self.name}({', '.join(parts)})"


def split_params(inner: str) -> list[str]:
    """Split a parameter list on top-level commas."""
    out, depth, cur = [], 0, ""
    for ch in inner:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        out.append(cur.strip())
    return out


def parse_signature(text: str) -> Signature:
    """Parse ``name(type a, type b)``; names may be omitted."""
    text = text.strip()
    open_ = text.index("(")
    if not text.endswith(")"):
        raise ValueError(f"malformed signature: {text!r}")
    name = text[:open_].strip()
    types, params = [], []
    for p in split_params(text[open_ + 1 : -1]):
        bits = p.split()
        # drop data-location keywords
        bits = [b for b in bits if b not in ("memory", "calldata", "storage")]
        types.append(bits[0])
        params.append(bits[1] if len(bits) > 1 else "")
    return Signature(name, tuple(types), tuple(params))


class SelectorDB:
    def __init__(self, signatures=()):
        self._by_selector: dict[str, Signature] = {}
        for s in signatures:
            self.add(s)

    @classmethod
    def builtin(cls) -> "SelectorDB":
        db = cls()
        text = resources.files("txlift").joinpath("data/signatures.txt").read_text()
        db.load_text(text)
        return db

    def load_text(self, text: str) -> None:
        for line in text.splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                self.add(line)

    def load_file(self, path: str | Path) -> None:
        self.load_text(Path(path).read_text())

    def add(self, sig: str | Signature) -> Signature:
        if isinstance(sig, str):
            sig = parse_signature(sig)
        old = self._by_selector.get(sig.selector)
        # keep the entry that knows more parameter names
        if old is None or sum(map(bool, sig.params)) > sum(map(bool, old.params)):
            self._by_selector[sig.selector] = sig
        return sig

    def lookup(self, selector: str | bytes | None) -> Signature | None:
        if selector is None:
            return None
        if isinstance(selector, (bytes, bytearray)):
            selector = "0x" + bytes(selector[:4]).hex()
        return self._by_selector.get(selector.lower())

    def name(self, selector: str) -> str:
        sig = self.lookup(selector)
        return sig.name if sig else f"func_{selector.lower().removeprefix('0x')}"

    def __contains__(self, selector) -> bool:
        return self.lookup(selector) is not None

    def __len__(self):
        return len(self._by_selector)
