"""PoC sketch assembly: fork setup, funding, oracle logs, invocation and holes.

The sketch is Solidity text in the Foundry test layout. Everything outside
the three placeholder markers is derived from the trace; a completion
provider fills only the markers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import MissingMeta
from .fundflow import NATIVE, TOKEN_NAMES, OracleSpec
from .hexutil import MASK256, checksum, looks_like_address, norm_address
from .lifter import PseudoStmt, calls_of, infer_types, is_dynamic
from .render import render_pseudocode
from .compress import expand_all
from .scope import AttackScope, FunctionTrace, Provenance
from .selectors import SelectorDB, Signature

ATTACK_LOGIC = "/*<<ATTACK_LOGIC>>*/"
OTHER_FUNCTIONS = "/*<<OTHER_FUNCTIONS>>*/"
OTHER_CONTRACTS = "/*<<OTHER_CONTRACTS>>*/"
MARKERS = {"AttackLogic": ATTACK_LOGIC, "OtherFunctions": OTHER_FUNCTIONS, "OtherContracts": OTHER_CONTRACTS}

FORK_NAMES = {"ethereum": "mainnet", "bsc": "bsc", "polygon": "polygon", "arbitrum": "arbitrum",
              "optimism": "optimism", "base": "base", "avalanche": "avalanche", "fantom": "fantom"}
PRE_LABEL = "[pre]"
POST_LABEL = "[post]"
ETHER = 10**18


@dataclass
class LiftedFunction:
    """Pseudocode of one in-scope function together with its trace."""

    trace: FunctionTrace
    stmts: list[PseudoStmt]
    provenance: Provenance = Provenance.DIRECT
    _by_step: dict | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def address(self) -> str:
        return self.trace.owner.address

    @property
    def selector(self) -> str | None:
        return self.trace.owner.selector

    def return_data(self, step: int) -> bytes:
        if self._by_step is None:
            self._by_step = dict(zip(self.trace.step_indices, self.trace.bound_values))
        rs = self._by_step.get(step)
        data = rs.value("return_data", rs.step.return_data) if rs is not None else None
        return bytes(data or b"")


@dataclass
class SketchMeta:
    chain: str | None
    block: int | None
    sender: str
    recipient: str
    input: bytes = b""
    value: int = 0


@dataclass(frozen=True)
class ObservedCall:
    target: str
    selector: str
    signature: Signature | None
    input: bytes
    returns: bytes = b""
    static: bool = False
    payable: bool = False


@dataclass(frozen=True)
class Invocation:
    target: str
    signature: str
    value: int
    text: str
    addresses: tuple[str, ...] = ()


@dataclass(frozen=True)
class Funding:
    account: str
    asset: str
    amount: int


@dataclass
class PocSketch:
    chain: str
    fork_block: int
    constants: dict[str, str]  # alias -> address
    funding: list[Funding]
    oracles: list[str]
    invocation_sequence: list[Invocation]
    placeholders: dict[str, str]
    abis: list[str]
    source_text: str
    oracle: OracleSpec | None = None
    aliases: dict[str, str] = field(default_factory=dict)  # address -> alias
    direct: bool = False
    attack_contract: str = ""

    def prompt_aliases(self) -> dict[str, str]:
        """Aliases for pseudocode shown to a provider; the attack contract reads as ``attC``."""
        out = dict(self.aliases)
        if self.attack_contract and not self.direct:
            out.setdefault(self.attack_contract, "attC")
        return out


# -- naming --------------------------------------------------------------------

RESERVED = frozenset({"attacker", "attC", "AttackerC", "ContractTest", "IERC20", "this", "address", "new", "type"})


def _ident(name: str) -> str:
    s = re.sub(r"\W", "_", name)
    return "_" + s if not s or s[0].isdigit() else s


class Aliaser:
    def __init__(self, sender: str, names: dict[str, str] | None = None):
        self.by_address: dict[str, str] = {norm_address(sender): "attacker"}
        self.names = {norm_address(k): v for k, v in (names or {}).items()}
        self.taken = {"attacker"}

    def __call__(self, address: str) -> str:
        address = norm_address(address)
        if address in self.by_address:
            return self.by_address[address]
        base = _ident(self.names.get(address) or TOKEN_NAMES.get(address) or f"Contract_{address[2:10]}")
        alias, n = base, 2
        while alias in self.taken or alias in RESERVED:
            alias, n = f"{base}_{n}", n + 1
        self.taken.add(alias)
        self.by_address[address] = alias
        return alias


# -- literals ------------------------------------------------------------------


def sol_uint(v: int) -> str:
    if v == MASK256:
        return "type(uint256).max"
    if v >= ETHER and v % (ETHER // 100) == 0:
        whole, frac = divmod(v, ETHER)
        return f"{whole} ether" if not frac else f"{v // (ETHER // 100)} * 1e16"
    return hex(v) if v >= 2**128 else str(v)


def sol_amount(v: int) -> str:
    return f"{v // ETHER} ether" if v and v % ETHER == 0 else str(v)


def _decode(types: tuple[str, ...], data: bytes):
    """Head-and-tail ABI decoding of ``data`` (selector stripped); None if it does not fit."""
    out = []
    for i, t in enumerate(types):
        head = data[32 * i : 32 * i + 32]
        if len(head) < 32:
            return None
        w = int.from_bytes(head, "big")
        if not is_dynamic(t):
            out.append(w)
            continue
        if t.endswith("[]") or w + 32 > len(data):
            return None
        n = int.from_bytes(data[w : w + 32], "big")
        if w + 32 + n > len(data):
            return None
        out.append(data[w + 32 : w + 32 + n])
    return out


def sol_value(t: str, v, alias: Aliaser, used: list[str]) -> str:
    if isinstance(v, bytes):
        return f'hex"{v.hex()}"' if t == "bytes" else f'string(hex"{v.hex()}")'
    if t == "address":
        used.append(norm_address(v))
        return alias(norm_address(v))
    if t == "bool":
        return "true" if v else "false"
    if t.startswith("bytes"):
        return f"bytes{t[5:]}(0x{v.to_bytes(32, 'big').hex()})"
    if t.startswith("int"):
        return str(v - 2**256 if v >= 2**255 else v)
    return sol_uint(v)


# -- interfaces ----------------------------------------------------------------


def _param(t: str, name: str) -> str:
    loc = " calldata" if is_dynamic(t) else ""
    return f"{t}{loc} {name}".rstrip() if name else f"{t}{loc}"


def function_types(call: ObservedCall) -> tuple[str, tuple[str, ...], tuple[str, ...]]:
    if call.signature is not None:
        return call.signature.name, call.signature.types, call.signature.params
    types = infer_types(call.input)
    return f"func_{call.selector[2:]}", types, ("",) * len(types)


def _returns(data: bytes) -> str:
    if not data or len(data) % 32 or len(data) > 4 * 32:
        return ""
    words = [int.from_bytes(data[i : i + 32], "big") for i in range(0, len(data), 32)]
    return " returns (" + ", ".join("address" if looks_like_address(w) else "uint256" for w in words) + ")"


def abi_entry(call: ObservedCall) -> str:
    name, types, params = function_types(call)
    mut = " view" if call.static else " payable" if call.payable else ""
    args = ", ".join(_param(t, n) for t, n in zip(types, params))
    return f"function {name}({args}) external{mut}{_returns(call.returns)};"


def render_abis(calls: list[ObservedCall], alias=None) -> list[str]:
    """One interface per target address, one entry per distinct selector."""
    alias = alias or (lambda a: f"Contract_{a[2:10]}")
    grouped: dict[str, dict[str, str]] = {}
    for c in calls:
        entries = grouped.setdefault(c.target, {})
        entries.setdefault(c.selector, abi_entry(c))
    out = []
    for target in sorted(grouped, key=alias):
        body = "".join(f"    {e}\n" for e in grouped[target].values())
        out.append(f"interface I{alias(target)} {{\n{body}}}")
    return out


def observed_calls(functions: list[LiftedFunction], exclude: set[str] = frozenset()) -> list[ObservedCall]:
    out = []
    for fn in functions:
        for s in calls_of(expand_all(fn.stmts)):
            if s.kind == "create":
                continue
            sel = s.info.get("selector")
            target = s.operands[0].word
            if sel is None or target is None:
                continue
            target = norm_address(target)
            if target in exclude or s.kind == "delegate_call":
                continue
            value = s.operands[1].word
            out.append(ObservedCall(target, sel, s.info.get("signature"), s.info.get("input", b""),
                                    fn.return_data(s.step), s.kind == "static_call", bool(value)))
    return out


# -- identifier check ----------------------------------------------------------

BUILTINS = frozenset("""
pragma solidity import is contract interface library function public external internal private payable view pure
returns return memory calldata storage constant address uint256 uint int256 int bool bytes string bytes32 bytes4
uint8 uint112 uint128 uint160 int128 true false new emit this msg tx block abi type max min ether wei gwei if else
for while require revert assert vm Test deal log_named_uint log_named_decimal_uint hex length balance sender origin
value data call staticcall delegatecall encode encodeWithSelector encodeWithSignature decode keccak256 override
virtual fallback receive event modifier unchecked payable_ seconds days
""".split())


def _strip(source: str) -> str:
    source = re.sub(r"/\*.*?\*/", " ", source, flags=re.S)
    source = re.sub(r"//[^\n]*", " ", source)
    source = re.sub(r'hex"[0-9a-fA-F]*"', " ", source)
    return re.sub(r'"[^"\n]*"', " ", source)


def undeclared_identifiers(source: str) -> set[str]:
    """Identifiers used but never declared, by a token scan (not a parser)."""
    text = _strip(source)
    declared = set(re.findall(r"\b(?:contract|interface|library|function|event)\s+(\w+)", text))
    declared |= set(re.findall(r"\bconstant\s+(\w+)", text))
    # typed names: parameters and locals
    declared |= set(re.findall(r"\b(?:address|uint\d*|int\d*|bool|bytes\d*|string|I\w+|AttackerC)(?:\[\])?"
                               r"(?:\s+(?:memory|calldata|storage|payable))?\s+(\w+)\s*[=;,)]", text))
    used = set(re.findall(r"(?<![.\w])([A-Za-z_]\w*)", text))
    return {u for u in used - declared - BUILTINS if not re.fullmatch(r"0x[0-9a-fA-F]+|\d\w*", u)}


# -- assembly ------------------------------------------------------------------


def _entry_signature(meta: SketchMeta, selectors: SelectorDB) -> tuple[str, tuple[str, ...], tuple[str, ...]] | None:
    if len(meta.input) < 4:
        return None
    sel = "0x" + meta.input[:4].hex()
    sig = selectors.lookup(sel)
    if sig is not None:
        return sig.name, sig.types, sig.params
    types = infer_types(meta.input)
    return f"func_{sel[2:]}", types, ("",) * len(types)


def _invocation(receiver: str, target: str, entry, meta: SketchMeta, alias: Aliaser) -> Invocation:
    value = f"{{value: {sol_amount(meta.value)}}}" if meta.value else ""
    if entry is None:
        text = f"payable(address({receiver})).call{value}(\"\");"
        return Invocation(target, "receive()", meta.value, text)
    name, types, _ = entry
    decoded = _decode(types, meta.input[4:])
    used: list[str] = []
    if decoded is None:
        text = f"address({receiver}).call{value}(hex\"{meta.input.hex()}\");"
        return Invocation(target, f"{name}({','.join(types)})", meta.value, text)
    args = ", ".join(sol_value(t, v, alias, used) for t, v in zip(types, decoded))
    text = f"{receiver}.{name}{value}({args});"
    return Invocation(target, f"{name}({','.join(types)})", meta.value, text, tuple(dict.fromkeys(used)))


def _balance(asset: str, who: str, alias: Aliaser) -> str:
    if asset == NATIVE:
        return f"{who}.balance"
    return f"IERC20({alias(asset)}).balanceOf({who})"


def _label(asset: str, alias: Aliaser) -> str:
    return "native" if asset == NATIVE else alias(asset)


def oracle_logs(oracle: OracleSpec, who: str, alias: Aliaser, label: str) -> list[str]:
    return [f'emit log_named_uint("{label} {_label(a.asset, alias)}", {_balance(a.asset, who, alias)});'
            for a in oracle.assets]


def build_sketch(
    scope: AttackScope | None,
    functions: list[LiftedFunction],
    oracle: OracleSpec,
    meta: SketchMeta,
    *,
    names: dict[str, str] | None = None,
    selectors: SelectorDB | None = None,
    direct: bool = False,
) -> PocSketch:
    if not meta.chain or meta.block is None:
        raise MissingMeta("chain and block number are required to fork")
    selectors = selectors or SelectorDB.builtin()
    alias = Aliaser(meta.sender, names)
    a0 = norm_address(meta.recipient)
    direct = direct or scope is None or a0 not in scope.contracts
    in_scope = scope.contracts if scope is not None and not direct else set()

    entry = _entry_signature(meta, selectors)
    beneficiary = norm_address(oracle.beneficiary)
    if beneficiary == norm_address(meta.sender):
        who = "attacker"
    elif beneficiary == a0 and not direct:
        who = "address(attC)"
    else:
        who = alias(beneficiary)

    if direct:
        iface = f"I{alias(a0)}"
        invocation = _invocation(f"{iface}({alias(a0)})", a0, entry, meta, alias)
        sequence: list[Invocation] = []
    else:
        invocation = _invocation("attC", a0, entry, meta, alias)
        sequence = [invocation]

    for a in oracle.assets:
        if a.asset != NATIVE:
            alias(a.asset)
    calls = observed_calls(functions, exclude=in_scope)
    if direct and entry is not None:
        root = ObservedCall(a0, "0x" + meta.input[:4].hex(), selectors.lookup("0x" + meta.input[:4].hex()),
                            meta.input, payable=bool(meta.value))
        calls = [root] + calls
    for c in calls:
        alias(c.target)
    abis = render_abis(calls, alias)
    if any(a.asset != NATIVE for a in oracle.assets):
        abis.append("interface IERC20 {\n    function balanceOf(address owner) external view returns (uint256);\n}")

    constants = {v: k for k, v in alias.by_address.items()}
    funding = [Funding(norm_address(meta.sender), NATIVE, oracle.min_funding)]
    pre = oracle_logs(oracle, who, alias, PRE_LABEL)
    post = oracle_logs(oracle, who, alias, POST_LABEL)

    lines = ["// SPDX-License-Identifier: UNLICENSED", "pragma solidity ^0.8.10;", "",
             'import "forge-std/Test.sol";', ""]
    lines += [f"address constant {name} = {checksum(addr)};" for name, addr in constants.items()]
    lines += ["", "contract ContractTest is Test {", "    function setUp() public {",
              f'        vm.createSelectFork("{FORK_NAMES.get(meta.chain, meta.chain)}", {meta.block - 1});',
              f"        deal(attacker, {sol_amount(oracle.min_funding)});", "    }", "",
              "    function testPoC() public {"]
    body: list[str] = []
    if direct:
        body += pre + ["vm.startPrank(attacker, attacker);", invocation.text, ATTACK_LOGIC, "vm.stopPrank();"]
        body += post
    else:
        create = "AttackerC attC = new AttackerC();"
        if who == "address(attC)":
            body += ["vm.startPrank(attacker, attacker);", create] + pre
        else:
            body += pre + ["vm.startPrank(attacker, attacker);", create]
        body += [x.text for x in sequence] + ["vm.stopPrank();"] + post
    lines += [f"        {x}" for x in body] + ["    }"]
    if direct:
        lines += ["", f"    {OTHER_FUNCTIONS}", "}"]
    else:
        lines += ["}", "", "contract AttackerC {"]
        lines += _attack_functions(entry, functions, a0, selectors)
        lines += ["}"]
    helpers = sorted({f.address for f in functions if f.provenance != Provenance.DIRECT and f.address != a0})
    lines += [""]
    lines += [f"// helper logic observed at {alias(h)}" for h in helpers]
    lines += [OTHER_CONTRACTS, ""]
    lines += [x for abi in abis for x in (abi, "")]
    source = "\n".join(lines).rstrip() + "\n"

    return PocSketch(
        chain=meta.chain,
        fork_block=meta.block - 1,
        constants=constants,
        funding=funding,
        oracles=pre + post,
        invocation_sequence=sequence,
        placeholders=dict(MARKERS),
        abis=abis,
        source_text=source,
        oracle=oracle,
        aliases=dict(alias.by_address),
        direct=direct,
        attack_contract=a0,
    )


def _attack_functions(entry, functions: list[LiftedFunction], a0: str, selectors: SelectorDB) -> list[str]:
    out = []
    if entry is None:
        out += ["    receive() external payable {", f"        {ATTACK_LOGIC}", "    }"]
    else:
        name, types, params = entry
        args = ", ".join(_param(t, n or f"arg{i}") for i, (t, n) in enumerate(zip(types, params)))
        out += [f"    function {name}({args}) external payable {{", f"        {ATTACK_LOGIC}", "    }"]
    others = []
    for fn in functions:
        if fn.address != a0:
            continue
        if fn.selector is None:
            decl = "receive()"
        else:
            sig = selectors.lookup(fn.selector)
            decl = sig.canonical if sig is not None else f"func_{fn.selector[2:]}"
        if entry is None or decl.split("(")[0] != entry[0]:
            others.append(decl)
    out += [""]
    out += [f"    // observed callback: {d}" for d in dict.fromkeys(others)]
    out += [f"    {OTHER_FUNCTIONS}"]
    return out


def render_functions(functions: list[LiftedFunction], aliases: dict[str, str], selectors: SelectorDB | None = None) -> str:
    """Pseudocode of every function, headed by its owner and signature."""
    selectors = selectors or SelectorDB.builtin()
    parts = []
    for fn in functions:
        sig = selectors.lookup(fn.selector) if fn.selector else None
        name = sig.declaration() if sig is not None else (f"func_{fn.selector[2:]}" if fn.selector else "receive()")
        owner = aliases.get(fn.address, fn.address)
        head = f"// {owner}.{name} ({Provenance(fn.provenance).value})"
        parts.append(head + "\n" + render_pseudocode(fn.stmts, aliases))
    return "\n\n".join(parts)
