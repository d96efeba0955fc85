"""Contract-centric execution flow graph.

Every execution context (a call frame) becomes a node keyed by
``(depth, address, call_type, input digest)``. Contexts sharing a key are
aggregated, so a contract re-entered with the same calldata at the same depth
ends up as one node holding several instruction blocks. A block is a maximal run
of steps in one frame between two child calls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import opcodes as ops
from .hexutil import keccak
from .ingest import TraceStream

TRANSITION_OPS = frozenset(ops.CONTEXT_SWITCH_OPS | {"RETURN", "REVERT", "STOP", "SELFDESTRUCT"})

NodeKey = tuple[int, str, str, str]


@dataclass(frozen=True)
class Block:
    """Steps ``start`` up to but excluding ``end``, all in ``frame``."""

    frame: int
    start: int
    end: int
    reverted: bool = False

    def __len__(self):
        return self.end - self.start

    def indices(self) -> range:
        return range(self.start, self.end)


@dataclass
class CefgNode:
    depth: int
    address: str  # code address
    call_type: str
    input_digest: str
    input_len: int
    storage_address: str
    ins: list[Block] = field(default_factory=list)
    frames: list[int] = field(default_factory=list)
    static: bool = False
    reverted: bool = False  # every instance reverted

    @property
    def key(self) -> NodeKey:
        return (self.depth, self.address, self.call_type, self.input_digest)

    def instruction_count(self) -> int:
        return sum(len(b) for b in self.ins)


@dataclass(frozen=True)
class Edge:
    src: NodeKey
    dst: NodeKey
    op: str
    step: int  # the boundary step carrying ``op``


@dataclass
class Cefg:
    nodes: dict[NodeKey, CefgNode] = field(default_factory=dict)
    edges: list[Edge] = field(default_factory=list)
    root: NodeKey | None = None
    frame_node: dict[int, NodeKey] = field(default_factory=dict)
    frame_input: dict[int, bytes] = field(default_factory=dict)
    stream: TraceStream | None = field(default=None, repr=False, compare=False)

    def node(self, key: NodeKey) -> CefgNode:
        return self.nodes[key]

    def call_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.op in ops.CONTEXT_SWITCH_OPS]

    def to_json(self) -> dict:
        def k(key):
            return "|".join(str(p) for p in key)

        return {
            "root": k(self.root) if self.root else None,
            "nodes": [
                {
                    "key": k(n.key),
                    "depth": n.depth,
                    "address": n.address,
                    "storage_address": n.storage_address,
                    "call_type": n.call_type,
                    "input_digest": n.input_digest,
                    "input_len": n.input_len,
                    "static": n.static,
                    "reverted": n.reverted,
                    "frames": n.frames,
                    "blocks": [[b.start, b.end] for b in n.ins],
                }
                for n in self.nodes.values()
            ],
            "edges": [{"src": k(e.src), "dst": k(e.dst), "op": e.op, "step": e.step} for e in self.edges],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def digest(data: bytes) -> str:
    return "0x" + keccak(data).hex()


def frame_inputs(stream: TraceStream) -> dict[int, bytes]:
    """Calldata (or init code) of every frame."""
    out = {}
    for f in stream.frames:
        if f.entry_step is None:
            out[f.id] = stream.input
        else:
            mem = stream.steps[f.entry_step].step.memory_slice
            out[f.id] = mem if mem is not None else b""
    return out


def _frame_blocks(stream: TraceStream) -> dict[int, list[tuple[int, int]]]:
    """Split each frame's steps into runs interrupted by child frames."""
    runs: dict[int, list[tuple[int, int]]] = {f.id: [] for f in stream.frames}
    steps = stream.steps
    start = 0
    for i in range(1, len(steps) + 1):
        if i == len(steps) or steps[i].step.frame != steps[start].step.frame:
            runs[steps[start].step.frame].append((start, i))
            start = i
    return runs


def build_cefg(stream: TraceStream) -> Cefg:
    """Build the aggregated graph for ``stream``.

    Instructions of STATICCALL contexts (and everything nested below them) are
    left out of ``ins``; their nodes and edges are kept.
    """
    g = Cefg(stream=stream)
    if not stream.steps:
        return g
    frames = stream.frames
    inputs = frame_inputs(stream)
    g.frame_input = inputs
    static: dict[int, bool] = {}
    instances: list[CefgNode] = []
    for f in frames:
        if f.entry_step is None:
            call_type = "CALL"
        else:
            call_type = stream.steps[f.entry_step].step.op
        static[f.id] = call_type == "STATICCALL" or (f.parent is not None and static[f.parent])
        first = stream.steps[f.first_step].step
        data = inputs[f.id]
        instances.append(
            CefgNode(
                depth=f.depth,
                address=first.code_address,
                call_type=call_type,
                input_digest=digest(data),
                input_len=len(data),
                storage_address=first.context_address,
                frames=[f.id],
                static=static[f.id],
                reverted=f.reverted,
            )
        )
    for fid, runs in _frame_blocks(stream).items():
        if static[fid]:
            continue
        rev = frames[fid].reverted
        instances[fid].ins = [Block(fid, s, e, rev) for s, e in runs]

    nodes = aggregate(instances)
    g.nodes = {n.key: n for n in nodes}
    g.frame_node = {inst.frames[0]: inst.key for inst in instances}
    g.root = g.frame_node[0]

    for f in frames[1:]:
        parent_key = g.frame_node[f.parent]
        child_key = g.frame_node[f.id]
        g.edges.append(Edge(parent_key, child_key, stream.steps[f.entry_step].step.op, f.entry_step))
        exit_op = stream.steps[f.last_step].step.op
        if exit_op not in TRANSITION_OPS:
            # out-of-gas and other exceptional halts unwind like a revert
            exit_op = "REVERT"
        g.edges.append(Edge(child_key, parent_key, exit_op, f.last_step))
    g.edges.sort(key=lambda e: (e.step, e.op in ops.CONTEXT_SWITCH_OPS))
    return g


def aggregate(nodes: list[CefgNode]) -> list[CefgNode]:
    """Merge nodes with the same key; blocks stay in step order."""
    merged: dict[NodeKey, CefgNode] = {}
    for n in nodes:
        cur = merged.get(n.key)
        if cur is None:
            merged[n.key] = CefgNode(
                depth=n.depth,
                address=n.address,
                call_type=n.call_type,
                input_digest=n.input_digest,
                input_len=n.input_len,
                storage_address=n.storage_address,
                ins=list(n.ins),
                frames=list(n.frames),
                static=n.static,
                reverted=n.reverted,
            )
            continue
        cur.ins = sorted(cur.ins + n.ins, key=lambda b: b.start)
        cur.frames = sorted(set(cur.frames) | set(n.frames))
        cur.static = cur.static and n.static
        cur.reverted = cur.reverted and n.reverted
    return list(merged.values())
