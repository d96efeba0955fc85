"""Compile-and-run harnesses for PoC sources.

:class:`ForgeHarness` shells out to a ``forge``-compatible binary inside a
Foundry project. :class:`StubHarness` answers from Python callables and is
what the tests and offline runs use.
"""

from __future__ import annotations

import re
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .calls import CallSummary, call_summaries
from .errors import HarnessFailure
from .fundflow import NATIVE, OracleSpec, extract_fund_flow
from .hexutil import looks_like_address, norm_address
from .ingest import TraceStream
from .lifter import infer_types
from .selectors import SelectorDB


@dataclass(frozen=True)
class CallSite:
    """A call reduced to what alignment compares: names and rendered arguments."""

    index: int
    target: str  # lower-case address, or a label when the address is unknown
    name: str
    args: tuple[str, ...] = ()
    value: int = 0
    status: str = "ok"
    depth: int = 1
    creates: bool = False


@dataclass
class BuildResult:
    ok: bool
    diagnostics: list[str] = field(default_factory=list)


@dataclass
class RunResult:
    ok: bool  # the test ran to completion without reverting
    balances: dict[str, tuple[int, int]] = field(default_factory=dict)  # label -> (pre, post)
    calls: list[CallSite] = field(default_factory=list)
    error: str | None = None
    infra_error: str | None = None
    raw: str = ""


class Harness(Protocol):
    def build(self, source: str) -> BuildResult: ...

    def run(self, source: str) -> RunResult: ...


# -- call sites from recorded traces -----------------------------------------------


def _arg_text(t: str, v) -> str:
    if isinstance(v, bytes):
        return "0x" + v.hex()
    if t == "address":
        return norm_address(v)
    return str(v)


def site_from_summary(c: CallSummary, selectors: SelectorDB) -> CallSite:
    if c.creates:
        return CallSite(c.index, c.target, "new", (), c.value, c.status, c.depth, True)
    sel = c.selector
    if sel is None:
        return CallSite(c.index, c.target, "", (), c.value, c.status, c.depth)
    sig = selectors.lookup(sel)
    types = sig.types if sig is not None else infer_types(c.input)
    name = sig.name if sig is not None else f"func_{sel[2:]}"
    args = []
    for i, w in enumerate(c.words[: len(types)]):
        t = types[i]
        if t == "address" or (sig is None and looks_like_address(w)):
            args.append(norm_address(w))
        elif t in ("bytes", "string") or t.endswith("[]"):
            args.append("<dynamic>")
        else:
            args.append(str(w))
    return CallSite(c.index, c.target, name, tuple(args), c.value, c.status, c.depth)


def sites_from_stream(stream: TraceStream, selectors: SelectorDB | None = None) -> list[CallSite]:
    selectors = selectors or SelectorDB.builtin()
    return [site_from_summary(c, selectors) for c in call_summaries(stream)]


def asset_label(asset: str, aliases: dict[str, str]) -> str:
    return "native" if asset == NATIVE else aliases.get(asset, asset)


def run_result_from_stream(stream: TraceStream, oracle: OracleSpec, aliases: dict[str, str],
                           pre: dict[str, int] | None = None, selectors: SelectorDB | None = None) -> RunResult:
    """What a harness would report if the PoC replayed ``stream`` exactly."""
    pre = pre or {}
    deltas = {(d.account, d.asset): d.delta for d in extract_fund_flow(stream)}
    balances = {}
    for a in oracle.assets:
        label = asset_label(a.asset, aliases)
        before = pre.get(label, 0)
        balances[label] = (before, before + deltas.get((oracle.beneficiary, a.asset), 0))
    root = stream.frames[0] if stream.frames else None
    ok = root is None or root.status == "ok"
    return RunResult(ok, balances, sites_from_stream(stream, selectors), None if ok else "root call reverted")


# -- forge output ------------------------------------------------------------------

_CALL = re.compile(
    r"^(?P<pad>[\s│├└─]*)\[(?P<gas>\d+)\] (?P<target>.+?)::(?P<name>\w+)"
    r"(?:\{value: (?P<value>\d+)\})?\((?P<args>.*)\)(?P<kind> \[\w+\])?\s*$"
)
_NEW = re.compile(r"^(?P<pad>[\s│├└─]*)\[(?P<gas>\d+)\] → new (?P<name>\w+)@(?P<addr>0x[0-9a-fA-F]{40})")
_RET = re.compile(r"^(?P<pad>[\s│├└─]*)← \[(?P<kind>\w+)\]\s*(?P<msg>.*)$")
_ADDR = re.compile(r"0x[0-9a-fA-F]{40}")
_LOG = re.compile(r"^\s*\[(pre|post)\] (\S+): (-?\d+)")
_SKIP_TARGETS = ("VM", "console", "ContractTest")
INFRA_PATTERNS = ("Could not instantiate forked environment", "error sending request", "failed to get account",
                  "HTTP error", "429 Too Many Requests", "database error")


def _split_args(text: str) -> list[str]:
    out, depth, cur = [], 0, ""
    for ch in text:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        out.append(cur.strip())
    return out


def _norm_arg(a: str) -> str:
    m = _ADDR.search(a)
    if m and (a.startswith("0x") and len(a) == 42 or ": [" in a):
        return m.group(0).lower()
    first = a.split(" ")[0]
    return first if first else a


def _target(text: str) -> str:
    m = _ADDR.search(text)
    return m.group(0).lower() if m else text.strip()


def parse_forge_trace(text: str) -> list[CallSite]:
    """Call sites from ``forge test -vvvv`` call-trace text.

    Cheatcode and console calls are dropped. A call's status comes from the
    return line one level below it.
    """
    sites: list[CallSite] = []
    open_: list[tuple[int, int]] = []  # (indent, index into sites or -1)
    for line in text.splitlines():
        m = _CALL.match(line) or _NEW.match(line)
        r = None if m else _RET.match(line)
        if m:
            indent = len(m.group("pad"))
            while open_ and open_[-1][0] >= indent:
                open_.pop()
            depth = len(open_)
            if "addr" in m.re.groupindex:
                sites.append(CallSite(len(sites), m.group("addr").lower(), "new", (), 0, "ok", depth, True))
                open_.append((indent, len(sites) - 1))
                continue
            target = m.group("target")
            if target.split(":")[0] in _SKIP_TARGETS:
                open_.append((indent, -1))
                continue
            args = tuple(_norm_arg(a) for a in _split_args(m.group("args")))
            sites.append(CallSite(len(sites), _target(target), m.group("name"), args,
                                  int(m.group("value") or 0), "ok", depth))
            open_.append((indent, len(sites) - 1))
        elif r:
            indent = len(r.group("pad"))
            while open_ and open_[-1][0] >= indent:
                open_.pop()
            if open_ and r.group("kind") == "Revert":
                idx = open_[-1][1]
                if idx >= 0:
                    s = sites[idx]
                    sites[idx] = CallSite(s.index, s.target, s.name, s.args, s.value, "reverted", s.depth, s.creates)
    return sites


def parse_balance_logs(text: str) -> dict[str, tuple[int, int]]:
    pre: dict[str, int] = {}
    post: dict[str, int] = {}
    for line in text.splitlines():
        m = _LOG.match(line)
        if m:
            (pre if m.group(1) == "pre" else post)[m.group(2)] = int(m.group(3))
    return {k: (pre[k], post[k]) for k in pre if k in post}


def parse_diagnostics(text: str) -> list[str]:
    """Compiler error blocks: an ``Error`` line plus its location lines."""
    out: list[str] = []
    cur: list[str] = []
    for line in text.splitlines():
        if re.match(r"^\s*(Error|ParserError|DeclarationError|TypeError)\b", line):
            if cur:
                out.append("\n".join(cur))
            cur = [line.strip()]
        elif cur and line.strip() and (line.strip().startswith(("-->", "|")) or re.match(r"^\s*\d+\s*\|", line)):
            cur.append(line.rstrip())
        elif cur and not line.strip():
            out.append("\n".join(cur))
            cur = []
    if cur:
        out.append("\n".join(cur))
    return out


@dataclass
class ForgeHarness:
    """Runs PoCs inside an existing Foundry project (with forge-std installed)."""

    project: Path
    forge: str = "forge"
    test_file: str = "test/TxliftPoC.t.sol"
    timeout: float = 600.0
    env: dict[str, str] | None = None

    def _bin(self) -> str:
        path = shutil.which(self.forge)
        if path is None:
            raise HarnessFailure(f"{self.forge} not found on PATH")
        return path

    def _exec(self, *args: str) -> subprocess.CompletedProcess:
        try:
            return subprocess.run([self._bin(), *args], cwd=self.project, capture_output=True, text=True,
                                  timeout=self.timeout, env=self.env)
        except subprocess.TimeoutExpired as e:
            raise HarnessFailure(f"forge {args[0]} timed out") from e

    def _write(self, source: str) -> None:
        path = Path(self.project) / self.test_file
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(source)

    def build(self, source: str) -> BuildResult:
        self._write(source)
        p = self._exec("build")
        if p.returncode == 0:
            return BuildResult(True)
        text = p.stdout + "\n" + p.stderr
        return BuildResult(False, parse_diagnostics(text) or [text.strip()[-2000:]])

    def run(self, source: str) -> RunResult:
        self._write(source)
        p = self._exec("test", "--match-path", self.test_file, "-vvvv")
        text = p.stdout + "\n" + p.stderr
        infra = next((pat for pat in INFRA_PATTERNS if pat in text), None)
        if infra is not None:
            return RunResult(False, infra_error=infra, raw=text)
        ok = p.returncode == 0
        err = None if ok else next((ln.strip() for ln in text.splitlines() if "FAIL" in ln), "test failed")
        return RunResult(ok, parse_balance_logs(text), parse_forge_trace(text), err, raw=text)


def structural_errors(source: str) -> list[str]:
    """Cheap syntax checks: unbalanced brackets, leftover markers, missing semicolons."""
    from .sketch import MARKERS, _strip, undeclared_identifiers

    errors = [f"Error: placeholder {m} was not filled" for m in MARKERS.values() if m in source]
    text = _strip(source)
    for a, b in ("{}", "()", "[]"):
        if text.count(a) != text.count(b):
            errors.append(f"Error: unbalanced '{a}{b}'")
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.endswith(")") and not re.match(r"^(if|for|while|else|function|contract|interface|modifier)\b", s) \
                and not s.startswith(("pragma", "import")):
            errors.append(f"Error (2314): Expected ';' but got newline\n --> {n}")
    errors += [f"DeclarationError: Undeclared identifier '{x}'" for x in sorted(undeclared_identifiers(source))]
    return errors


@dataclass
class StubHarness:
    """A harness driven by Python callables instead of a compiler and a node."""

    execute: Callable[[str], RunResult]
    check: Callable[[str], list[str]] = structural_errors
    builds: int = 0
    runs: int = 0

    def build(self, source: str) -> BuildResult:
        self.builds += 1
        errors = self.check(source)
        return BuildResult(not errors, errors)

    def run(self, source: str) -> RunResult:
        self.runs += 1
        return self.execute(source)
