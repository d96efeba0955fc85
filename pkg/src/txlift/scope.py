"""Call graph construction and attack-scope localization.

The scope starts from the transaction's initial recipient and grows by three
rules until nothing changes:

1. every executed function of a scope contract joins the scope;
2. contracts created (CREATE/CREATE2) by a scope function join the contract set;
3. functions reached by DELEGATECALL or CALLCODE from a scope function join the
   scope, since they run foreign code in the caller's storage context.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .cefg import Block, Cefg
from .errors import EmptyScope
from .hexutil import norm_address
from .ingest import RecordedStep

FnKey = tuple[str, int, str]  # (address, depth, input digest)

DELEGATING = frozenset({"DELEGATECALL", "CALLCODE"})
CREATING = frozenset({"CREATE", "CREATE2"})


class Provenance(str, Enum):
    DIRECT = "DirectInvocation"
    CREATED = "DynamicInstantiation"
    DELEGATED = "ContextDelegation"


@dataclass
class CallGraphNode:
    address: str
    depth: int
    input_digest: str
    selector: str | None = None
    storage_address: str = ""
    call_types: list[str] = field(default_factory=list)
    children: list[tuple[str, "CallGraphNode"]] = field(default_factory=list)
    frames: list[int] = field(default_factory=list)

    @property
    def key(self) -> FnKey:
        return (self.address, self.depth, self.input_digest)

    def __hash__(self):
        return hash(self.key)

    def __eq__(self, other):
        return isinstance(other, CallGraphNode) and self.key == other.key


@dataclass
class CallGraph:
    nodes: dict[FnKey, CallGraphNode] = field(default_factory=dict)
    root: CallGraphNode | None = None

    def __iter__(self):
        return iter(self.nodes.values())

    def __len__(self):
        return len(self.nodes)


@dataclass
class AttackScope:
    contracts: set[str] = field(default_factory=set)
    functions: set[FnKey] = field(default_factory=set)
    provenance: dict[str | FnKey, Provenance] = field(default_factory=dict)

    def __contains__(self, key) -> bool:
        return key in self.functions or key in self.contracts


@dataclass
class FunctionTrace:
    owner: CallGraphNode
    blocks: list[Block]
    pc_sequence: list[int]
    bound_values: list[RecordedStep]

    @property
    def step_indices(self) -> list[int]:
        return [i for b in self.blocks for i in b.indices()]

    def __len__(self):
        return sum(len(b) for b in self.blocks)


def _selector(data: bytes) -> str | None:
    return "0x" + data[:4].hex() if len(data) >= 4 else None


def build_call_graph(cefg: Cefg) -> CallGraph:
    """One node per (address, depth, input); children in first-seen order."""
    cg = CallGraph()
    if cefg.root is None:
        return cg
    frame_fn: dict[int, CallGraphNode] = {}
    stream = cefg.stream
    for fid, nkey in sorted(cefg.frame_node.items()):
        node = cefg.nodes[nkey]
        key = (node.address, node.depth, node.input_digest)
        fn = cg.nodes.get(key)
        if fn is None:
            fn = CallGraphNode(
                address=node.address,
                depth=node.depth,
                input_digest=node.input_digest,
                selector=_selector(cefg.frame_input.get(fid, b"")) if node.call_type not in CREATING else None,
                storage_address=node.storage_address,
            )
            cg.nodes[key] = fn
        if node.call_type not in fn.call_types:
            fn.call_types.append(node.call_type)
        fn.frames.append(fid)
        frame_fn[fid] = fn
    for f in stream.frames:
        if f.parent is None:
            cg.root = frame_fn[f.id]
            continue
        parent, child = frame_fn[f.parent], frame_fn[f.id]
        edge_op = stream.steps[f.entry_step].step.op
        if not any(op == edge_op and c is child for op, c in parent.children):
            parent.children.append((edge_op, child))
    return cg


def localize_scope(cg: CallGraph, a0: str) -> AttackScope:
    """Least fixed point of the three expansion rules, seeded with ``a0``."""
    a0 = norm_address(a0)
    scope = AttackScope(contracts={a0}, provenance={a0: Provenance.DIRECT})
    by_address: dict[str, list[CallGraphNode]] = {}
    for fn in cg:
        by_address.setdefault(fn.address, []).append(fn)
    if a0 not in by_address:
        raise EmptyScope(f"{a0} executes no code in this transaction")

    work: deque[CallGraphNode] = deque()

    def add_function(fn: CallGraphNode, tag: Provenance) -> None:
        if fn.key not in scope.functions:
            scope.functions.add(fn.key)
            scope.provenance[fn.key] = tag
            work.append(fn)

    def add_contract(address: str) -> None:
        if address not in scope.contracts:
            scope.contracts.add(address)
            scope.provenance[address] = Provenance.CREATED
            for fn in by_address.get(address, []):
                add_function(fn, Provenance.CREATED)

    for fn in by_address[a0]:
        add_function(fn, Provenance.DIRECT)
    while work:
        fn = work.popleft()
        for op, child in fn.children:
            if op in CREATING:
                add_contract(child.address)
            elif op in DELEGATING:
                add_function(child, Provenance.DELEGATED)
    return scope


def extract_instructions(scope: AttackScope, cefg: Cefg) -> list[FunctionTrace]:
    """Instruction streams of in-scope functions, in order of first execution.

    Blocks from reverted frames are left out.
    """
    if not scope.functions or cefg.stream is None:
        return []
    cg = build_call_graph(cefg)
    grouped: dict[FnKey, list[Block]] = {}
    for node in cefg.nodes.values():
        fk = (node.address, node.depth, node.input_digest)
        if fk in scope.functions:
            grouped.setdefault(fk, []).extend(b for b in node.ins if not b.reverted)
    steps = cefg.stream.steps
    out = []
    for fk, blocks in grouped.items():
        if not blocks:
            continue
        blocks.sort(key=lambda b: b.start)
        idx = [i for b in blocks for i in b.indices()]
        out.append(
            FunctionTrace(
                owner=cg.nodes[fk],
                blocks=blocks,
                pc_sequence=[steps[i].step.pc for i in idx],
                bound_values=[steps[i] for i in idx],
            )
        )
    out.sort(key=lambda t: t.blocks[0].start)
    return out


def reduction_factor(cefg: Cefg, traces: list[FunctionTrace]) -> float:
    """Executed (non-static) instructions divided by in-scope instructions."""
    total = sum(n.instruction_count() for n in cefg.nodes.values())
    kept = sum(len(t) for t in traces)
    return total / kept if kept else float("inf")


def render_call_graph(cg: CallGraph, scope: AttackScope | None = None, names=None) -> str:
    """Text tree; in-scope functions are marked with ``*``."""
    names = names or {}
    lines: list[str] = []
    seen: set[FnKey] = set()

    def label(fn: CallGraphNode) -> str:
        who = names.get(fn.address, fn.address)
        if fn.selector is None:
            what = "constructor" if any(t in CREATING for t in fn.call_types) else "fallback"
        else:
            what = names.get(fn.selector, fn.selector)
        return f"{who}.{what}"

    def walk(fn: CallGraphNode, op: str, indent: int) -> None:
        mark = "*" if scope and fn.key in scope.functions else " "
        lines.append(f"{mark} {'  ' * indent}[{op}] {label(fn)}")
        if fn.key in seen:
            return
        seen.add(fn.key)
        for cop, child in fn.children:
            walk(child, cop, indent + 1)

    if cg.root is not None:
        walk(cg.root, cg.root.call_types[0], 0)
    return "\n".join(lines)
