"""A small concrete EVM-like machine for producing synthetic transaction traces.

Contracts are Python callables that drive a :class:`Ctx` opcode by opcode, so
every emitted step carries a stack, memory and storage state consistent with
real EVM semantics. The builder writes the result in the native line-JSON trace
format, or as geth ``structLogs`` when memory capture is enabled.

This module exists to produce fixtures and demo traces; it is not an EVM.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import opcodes as ops
from .hexutil import MASK160, WORD, keccak, norm_address, selector, to_int, word
from .semantics import PURE_OPS, evaluate, sha3_word

Program = Callable[["Ctx"], None]
Producer = Callable[["Ctx"], None]

TRANSFER_SIG = "Transfer(address,address,uint256)"
APPROVAL_SIG = "Approval(address,address,uint256)"
# memory offsets are pushed at a fixed width so loop bodies keep stable pcs
OFFSET_WIDTH = 3


class Revert(Exception):
    """Raised inside a program to abort the current frame."""


@dataclass
class Contract:
    program: Program
    code_size: int = 0x1000


@dataclass
class TraceBuilder:
    sender: str
    to: str
    input: bytes = b""
    value: int = 0
    chain: str = "bsc"
    chain_id: int = 56
    block_number: int = 1_000_000
    tx_hash: str = "0x" + "11" * 32
    timestamp: int = 1_700_000_000
    capture_memory: bool = False
    stack_snapshot: int = 16
    records: list[dict] = field(default_factory=list)
    logs: list[dict] = field(default_factory=list)
    transfers: list[dict] = field(default_factory=list)
    contracts: dict[str, Contract] = field(default_factory=dict)
    initcodes: dict[bytes, tuple[Program | None, Program]] = field(default_factory=dict)
    storage: dict[tuple[str, int], int] = field(default_factory=lambda: defaultdict(int))
    balances: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    gas: int = 30_000_000
    _create_nonce: int = 0

    def __post_init__(self):
        self.sender = norm_address(self.sender)
        self.to = norm_address(self.to)

    def deploy(self, address: str, program: Program, code_size: int = 0x1000) -> str:
        address = norm_address(address)
        self.contracts[address] = Contract(program, code_size)
        return address

    def register_initcode(self, code: bytes, runtime: Program, constructor: Program | None = None) -> bytes:
        self.initcodes[bytes(code)] = (constructor, runtime)
        return bytes(code)

    def run(self) -> "TraceBuilder":
        if self.value:
            self.balances[self.sender] -= self.value
            self.balances[self.to] += self.value
        contract = self.contracts.get(self.to)
        if contract is None:
            return self
        root = Ctx(self, depth=1, address=self.to, code_address=self.to, caller=self.sender,
                   callvalue=self.value, calldata=self.input)
        root.execute(contract.program)
        return self

    # -- output ---------------------------------------------------------------

    def header(self) -> dict:
        return {
            "kind": "tx",
            "tx_hash": self.tx_hash,
            "chain": self.chain,
            "chain_id": self.chain_id,
            "block_number": self.block_number,
            "sender": self.sender,
            "to": self.to,
            "input": "0x" + self.input.hex(),
            "value": hex(self.value),
        }

    def to_native(self) -> str:
        lines = [json.dumps(self.header())]
        for rec in self.records:
            out = {
                "kind": "step",
                "pc": rec["pc"],
                "op": rec["op"],
                "depth": rec["depth"],
                "gas": rec["gas"],
                "stack": [hex(v) for v in rec["stack"][: self.stack_snapshot]],
                "address": rec["address"],
            }
            if rec["code_address"] != rec["address"]:
                out["code_address"] = rec["code_address"]
            if rec.get("mem") is not None:
                out["mem"] = "0x" + rec["mem"].hex()
            if rec.get("imm") is not None:
                out["imm"] = hex(rec["imm"])
            lines.append(json.dumps(out))
        for lg in self.logs:
            lines.append(json.dumps({"kind": "log", **lg}))
        for t in self.transfers:
            lines.append(json.dumps({"kind": "transfer", **t}))
        return "\n".join(lines) + "\n"

    def to_geth(self) -> str:
        if not self.capture_memory:
            raise ValueError("geth output needs capture_memory=True")
        hdr = self.header()
        hdr.pop("kind")
        hdr["from"] = hdr.pop("sender")
        logs = []
        for rec in self.records:
            mem = rec["memory"]
            logs.append(
                {
                    "pc": rec["pc"],
                    "op": rec["op"],
                    "gas": rec["gas"],
                    "gasCost": 3,
                    "depth": rec["depth"],
                    "stack": [hex(v) for v in rec["full_stack"]],
                    "memory": [mem[i : i + 32].hex() for i in range(0, len(mem), 32)],
                }
            )
        return json.dumps({"tx": hdr, "structLogs": logs})


class Ctx:
    """One execution frame."""

    def __init__(self, builder: TraceBuilder, *, depth, address, code_address, caller, callvalue=0,
                 calldata=b"", static=False):
        self.b = builder
        self.depth = depth
        self.address = norm_address(address)
        self.code_address = norm_address(code_address)
        self.caller = norm_address(caller)
        self.callvalue = callvalue
        self.calldata = bytes(calldata)
        self.static = static
        self.stack: list[int] = []
        self.memory = bytearray()
        self.pc = 0
        self.returndata = b""
        self.output = b""
        self.status: str | None = None  # ok | reverted

    # -- running ------------------------------------------------------------

    def execute(self, program: Program) -> None:
        try:
            program(self)
        except Revert:
            if self.status is None:
                self.revert()
        if self.status is None:
            self.op("STOP")

    @property
    def selector(self) -> int:
        return int.from_bytes(self.calldata[:4].ljust(4, b"\x00"), "big")

    def label(self, n: int = 0) -> int:
        """A jump destination ahead of the current pc.

        Derived from the pc so a loop body re-executed at the same pcs also
        jumps to the same destinations.
        """
        return self.pc + 0x1000 + 0x100 * n

    # -- emission -------------------------------------------------------------

    def _emit(self, name: str, *, mem: bytes | None = None, imm: int | None = None) -> int:
        b = self.b
        rec = {
            "pc": self.pc,
            "op": name,
            "depth": self.depth,
            "gas": b.gas,
            "stack": list(reversed(self.stack[-b.stack_snapshot :])),
            "address": self.address,
            "code_address": self.code_address,
            "mem": mem,
            "imm": imm,
        }
        if b.capture_memory:
            rec["memory"] = bytes(self.memory)
            rec["full_stack"] = list(self.stack)
        b.records.append(rec)
        b.gas -= 3
        return len(b.records) - 1

    def _pop(self, n: int) -> list[int]:
        if len(self.stack) < n:
            raise RuntimeError(f"stack underflow at pc {self.pc:#x}")
        out = [self.stack.pop() for _ in range(n)]
        return out

    def _mem_extend(self, offset: int, size: int) -> None:
        if size == 0:
            return
        end = offset + size
        if end > len(self.memory):
            new = (end + 31) // 32 * 32
            self.memory.extend(b"\x00" * (new - len(self.memory)))

    def mread(self, offset: int, size: int) -> bytes:
        self._mem_extend(offset, size)
        return bytes(self.memory[offset : offset + size])

    def _mwrite(self, offset: int, data: bytes) -> None:
        self._mem_extend(offset, len(data))
        self.memory[offset : offset + len(data)] = data

    def push(self, value: int, size: int | None = None) -> "Ctx":
        value %= WORD
        if size is None:
            size = max(1, (value.bit_length() + 7) // 8)
        name = f"PUSH{size}"
        self._emit(name, imm=value)
        self.stack.append(value)
        self.pc += 1 + size
        return self

    def jumpdest(self) -> "Ctx":
        return self.op("JUMPDEST")

    def op(self, name: str) -> "Ctx":
        name = ops.normalize(name)
        b = self.b
        if name in PURE_OPS:
            info = ops.OPCODES[name]
            self._emit(name)
            args = self._pop(info.pops)
            self.stack.append(evaluate(name, args))
        elif name.startswith("DUP"):
            n = int(name[3:])
            self._emit(name)
            self.stack.append(self.stack[-n])
        elif name.startswith("SWAP"):
            n = int(name[4:])
            self._emit(name)
            self.stack[-1], self.stack[-1 - n] = self.stack[-1 - n], self.stack[-1]
        elif name == "POP":
            self._emit(name)
            self._pop(1)
        elif name == "JUMPDEST":
            self._emit(name)
        elif name == "JUMP":
            self._emit(name)
            (dest,) = self._pop(1)
            self.pc = dest
            return self
        elif name == "JUMPI":
            self._emit(name)
            dest, cond = self._pop(2)
            self.pc = dest if cond else self.pc + 1
            return self
        elif name == "MLOAD":
            self._emit(name)
            (off,) = self._pop(1)
            self.stack.append(int.from_bytes(self.mread(off, 32), "big"))
        elif name == "MSTORE":
            self._emit(name)
            off, val = self._pop(2)
            self._mwrite(off, word(val))
        elif name == "MSTORE8":
            self._emit(name)
            off, val = self._pop(2)
            self._mwrite(off, bytes([val & 0xFF]))
        elif name == "MCOPY":
            self._emit(name)
            dst, src, size = self._pop(3)
            self._mwrite(dst, self.mread(src, size))
        elif name == "SHA3":
            self._emit(name, mem=self.mread(self.stack[-1], self.stack[-2]))
            off, size = self._pop(2)
            self.stack.append(sha3_word(self.mread(off, size)))
        elif name in _ENV:
            self._emit(name)
            self.stack.append(_ENV[name](self) % WORD)
        elif name in ("BALANCE", "EXTCODESIZE", "EXTCODEHASH", "BLOCKHASH"):
            self._emit(name)
            (arg,) = self._pop(1)
            if name == "BALANCE":
                self.stack.append(b.balances[norm_address(arg)])
            elif name == "EXTCODESIZE":
                c = b.contracts.get(norm_address(arg))
                self.stack.append(c.code_size if c else 0)
            else:
                self.stack.append(sha3_word(word(arg)))
        elif name == "CALLDATALOAD":
            self._emit(name)
            (off,) = self._pop(1)
            self.stack.append(int.from_bytes(self.calldata[off : off + 32].ljust(32, b"\x00"), "big"))
        elif name in ("CALLDATACOPY", "CODECOPY", "RETURNDATACOPY"):
            dst, src, size = self.stack[-1], self.stack[-2], self.stack[-3]
            source = {"CALLDATACOPY": self.calldata, "RETURNDATACOPY": self.returndata,
                      "CODECOPY": b"\xfe" * 0x1000}[name]
            data = source[src : src + size].ljust(size, b"\x00")
            self._emit(name, mem=data)
            self._pop(3)
            self._mwrite(dst, data)
        elif name in ("SLOAD", "TLOAD"):
            self._emit(name)
            (slot,) = self._pop(1)
            space = self.address if name == "SLOAD" else "t:" + self.address
            self.stack.append(b.storage[(space, slot)])
        elif name in ("SSTORE", "TSTORE"):
            self._emit(name)
            slot, val = self._pop(2)
            space = self.address if name == "SSTORE" else "t:" + self.address
            b.storage[(space, slot)] = val
        elif name.startswith("LOG"):
            n = int(name[3:])
            off, size = self.stack[-1], self.stack[-2]
            data = self.mread(off, size)
            idx = self._emit(name, mem=data)
            args = self._pop(2 + n)
            b.logs.append({
                "step": idx,
                "address": self.address,
                "topics": [hex(t) for t in args[2:]],
                "data": "0x" + data.hex(),
            })
        elif name in ops.CALL_OPS:
            return self._call(name)
        elif name in ops.CREATE_OPS:
            return self._create(name)
        elif name in ("RETURN", "REVERT"):
            off, size = self.stack[-1], self.stack[-2]
            data = self.mread(off, size)
            self._emit(name, mem=data)
            self._pop(2)
            self.output = data
            self.status = "ok" if name == "RETURN" else "reverted"
            self.pc += 1
            return self
        elif name == "STOP":
            self._emit(name)
            self.status = "ok"
            self.output = b""
        elif name == "INVALID":
            self._emit(name)
            self.status = "reverted"
        elif name == "SELFDESTRUCT":
            idx = self._emit(name)
            (ben,) = self._pop(1)
            ben = norm_address(ben)
            amount = b.balances[self.address]
            if amount and ben != self.address:
                b.balances[self.address] = 0
                b.balances[ben] += amount
                b.transfers.append({"step": idx, "from": self.address, "to": ben, "value": hex(amount),
                                    "op": "SELFDESTRUCT"})
            self.status = "ok"
        else:
            raise NotImplementedError(name)
        self.pc += 1
        return self

    def _call(self, name: str) -> "Ctx":
        b = self.b
        st = self.stack
        if name in ("CALL", "CALLCODE"):
            target, value, ao, al, ro, rl = st[-2], st[-3], st[-4], st[-5], st[-6], st[-7]
            n = 7
        else:
            target, ao, al, ro, rl = st[-2], st[-3], st[-4], st[-5], st[-6]
            value, n = 0, 6
        args = self.mread(ao, al)
        idx = self._emit(name, mem=args)
        self._pop(n)
        self.pc += 1
        target = norm_address(target)
        if name == "DELEGATECALL":
            addr, caller, cv = self.address, self.caller, self.callvalue
        elif name == "CALLCODE":
            addr, caller, cv = self.address, self.address, value
        else:
            addr, caller, cv = target, self.address, value
        contract = b.contracts.get(target)
        snapshot = dict(b.storage), dict(b.balances)
        ok, out = True, b""
        if value and name == "CALL":
            if b.balances[self.address] < value:
                ok = False
            else:
                b.balances[self.address] -= value
                b.balances[target] += value
        if ok and contract is not None:
            child = Ctx(b, depth=self.depth + 1, address=addr, code_address=target, caller=caller,
                        callvalue=cv, calldata=args, static=self.static or name == "STATICCALL")
            child.execute(contract.program)
            ok, out = child.status == "ok", child.output
        if not ok:
            b.storage.clear()
            b.storage.update(snapshot[0])
            b.balances.clear()
            b.balances.update(snapshot[1])
        elif value and name == "CALL":
            b.transfers.append({"step": idx, "from": self.address, "to": target, "value": hex(value), "op": name})
        self.returndata = out
        self._mwrite(ro, out[:rl]) if rl else None
        st.append(int(ok))
        return self

    def _create(self, name: str) -> "Ctx":
        b = self.b
        st = self.stack
        value, off, size = st[-1], st[-2], st[-3]
        salt = st[-4] if name == "CREATE2" else None
        init = self.mread(off, size)
        idx = self._emit(name, mem=init)
        self._pop(4 if salt is not None else 3)
        self.pc += 1
        if salt is not None:
            raw = keccak(b"\xff" + bytes.fromhex(self.address[2:]) + word(salt) + keccak(init))
        else:
            b._create_nonce += 1
            raw = keccak(bytes.fromhex(self.address[2:]) + b._create_nonce.to_bytes(8, "big"))
        new = norm_address(int.from_bytes(raw[12:], "big"))
        ctor, runtime = b.initcodes.get(init, (None, None))
        ok = True
        if value:
            b.balances[self.address] -= value
            b.balances[new] += value
        if ctor is not None:
            child = Ctx(b, depth=self.depth + 1, address=new, code_address=new, caller=self.address,
                        callvalue=value, calldata=b"")
            child.execute(ctor)
            ok = child.status == "ok"
        if ok:
            if runtime is not None:
                b.contracts[new] = Contract(runtime)
            if value:
                b.transfers.append({"step": idx, "from": self.address, "to": new, "value": hex(value), "op": name})
        self.returndata = b""
        st.append(int(new, 16) if ok else 0)
        return self

    # -- solidity-flavoured helpers -------------------------------------------

    def emit_value(self, producer) -> None:
        if callable(producer):
            producer(self)
        else:
            self.push(to_int(producer))

    def prologue(self) -> "Ctx":
        return self.push(0x80).push(0x40).op("MSTORE")

    def free_pointer(self) -> int:
        return int.from_bytes(self.mread(0x40, 32), "big")

    def _set_free_pointer(self, value: int) -> None:
        self.push(value, OFFSET_WIDTH).push(0x40).op("MSTORE")

    def guard(self, producer: Producer) -> "Ctx":
        """``require(cond)``: jump over a revert when the condition holds."""
        producer(self)
        ok = self.label()
        self.push(ok, 3).op("JUMPI")
        if self.pc != ok:
            self.push(0).push(0).op("REVERT")
            raise Revert()
        return self.jumpdest()

    def guard_calldata(self, nargs: int) -> "Ctx":
        def cond(c):
            c.push(32 * nargs).push(4).op("CALLDATASIZE").op("SUB").op("SLT").op("ISZERO")
        return self.guard(cond)

    def guard_no_value(self) -> "Ctx":
        return self.guard(lambda c: c.op("CALLVALUE").op("ISZERO"))

    def dispatch(self, signatures: Sequence[str]) -> str:
        """Selector dispatcher; returns the matched signature (reverts if none)."""
        self.push(0).op("CALLDATALOAD").push(0xE0).op("SHR")
        for sig in signatures:
            sel = int(selector(sig), 16)
            dest = self.label()
            self.op("DUP1").push(sel, 4).op("EQ").push(dest, 3).op("JUMPI")
            if self.pc == dest:
                self.jumpdest().op("POP")
                return sig
        self.push(0).push(0).op("REVERT")
        raise Revert()

    def arg(self, i: int) -> "Ctx":
        return self.push(4 + 32 * i).op("CALLDATALOAD")

    def arg_address(self, i: int) -> "Ctx":
        return self.arg(i).push(MASK160, 20).op("AND")

    def mload(self, offset: int) -> "Ctx":
        return self.push(offset, OFFSET_WIDTH).op("MLOAD")

    def mstore(self, offset: int, producer) -> "Ctx":
        self.emit_value(producer)
        return self.push(offset, OFFSET_WIDTH).op("MSTORE")

    def mapping_slot(self, key: Producer, index: int) -> "Ctx":
        """keccak(key . index) in scratch space."""
        self.emit_value(key)
        self.push(0).op("MSTORE")
        self.push(index).push(0x20).op("MSTORE")
        return self.push(0x40).push(0).op("SHA3")

    def call_fn(self, kind: str, target, signature: str, args: Sequence = (), *, value=0,
                ret_words: int = 1, check_code: bool = True, check_success: bool = True) -> int:
        """ABI-encode ``signature(args)`` at the free pointer and issue ``kind``.

        ``args`` items are ints, producers, or ``("bytes", [words])`` / ``("array", [words])``
        for dynamic parameters. Returns the memory offset of the return buffer.
        """
        self.push(0x40).op("MLOAD").op("POP")
        ptr = self.free_pointer()
        if signature:
            sel = int(selector(signature), 16)
            self.push(sel, 4).push(0xE0).op("SHL").push(ptr, OFFSET_WIDTH).op("MSTORE")
        head = ptr + 4
        tail_off = 32 * len(args)
        tails: list[tuple[int, list]] = []
        for i, a in enumerate(args):
            if isinstance(a, tuple):
                kind_, items = a
                self.mstore(head + 32 * i, tail_off)
                tails.append((tail_off, [len(items) * (32 if kind_ == "bytes" else 1)] + list(items)))
                tail_off += 32 * (1 + len(items))
            else:
                self.mstore(head + 32 * i, a)
        for off, items in tails:
            for j, item in enumerate(items):
                self.mstore(head + off + 32 * j, item)
        args_len = 4 + tail_off if signature else 0
        ret_off = ptr + args_len
        ret_len = 32 * ret_words
        self._set_free_pointer(ret_off + ret_len)
        if check_code:
            self.guard(lambda c: (c.emit_value(target), c.op("EXTCODESIZE"), c.op("ISZERO"), c.op("ISZERO")))
        self.push(ret_len, OFFSET_WIDTH).push(ret_off, OFFSET_WIDTH).push(args_len, OFFSET_WIDTH).push(ptr, OFFSET_WIDTH)
        if kind in ("CALL", "CALLCODE"):
            self.emit_value(value)
        self.emit_value(target)
        self.op("GAS").op(kind)
        if check_success:
            self.guard(lambda c: (c.op("ISZERO"), c.op("ISZERO")))
        else:
            self.op("POP")
        return ret_off

    def loop(self, k: int, body: Callable[["Ctx", int], None]) -> None:
        """``for (i = 0; i < k; i++) body(i)`` with the counter kept on the stack."""
        head, exit_ = self.label(0), self.label(1)
        self.push(0).push(head, 3).op("JUMP")
        for i in range(k + 1):
            self.jumpdest()
            self.op("DUP1").push(k).op("SWAP1").op("LT").op("ISZERO").push(exit_, 3).op("JUMPI")
            if i == k:
                break
            body(self, i)
            self.push(1).op("ADD").push(head, 3).op("JUMP")
        self.jumpdest().op("POP")

    def create(self, initcode: bytes, salt: int | None = None, value=0) -> "Ctx":
        """Write ``initcode`` at the free pointer and CREATE (or CREATE2 with ``salt``).

        Leaves the new address (or 0) on the stack.
        """
        self.push(0x40).op("MLOAD").op("POP")
        ptr = self.free_pointer()
        padded = initcode + b"\x00" * (-len(initcode) % 32)
        for i in range(0, len(padded), 32):
            self.mstore(ptr + i, int.from_bytes(padded[i : i + 32], "big"))
        self._set_free_pointer(ptr + len(padded))
        if salt is not None:
            self.push(salt)
        self.push(len(initcode), OFFSET_WIDTH).push(ptr, OFFSET_WIDTH)
        self.emit_value(value)
        return self.op("CREATE2" if salt is not None else "CREATE")

    def ret_words(self, words: Sequence) -> None:
        ptr = self.free_pointer()
        for i, w in enumerate(words):
            self.mstore(ptr + 32 * i, w)
        self.push(32 * len(words), OFFSET_WIDTH).push(ptr, OFFSET_WIDTH).op("RETURN")

    def revert(self, reason: bytes = b"") -> None:
        self.push(len(reason)).push(0).op("REVERT")

    def stop(self) -> None:
        self.op("STOP")


_ENV = {
    "ADDRESS": lambda c: int(c.address, 16),
    "ORIGIN": lambda c: int(c.b.sender, 16),
    "CALLER": lambda c: int(c.caller, 16),
    "CALLVALUE": lambda c: c.callvalue,
    "CALLDATASIZE": lambda c: len(c.calldata),
    "CODESIZE": lambda c: 0x1000,
    "GASPRICE": lambda c: 3 * 10**9,
    "RETURNDATASIZE": lambda c: len(c.returndata),
    "COINBASE": lambda c: 0,
    "TIMESTAMP": lambda c: c.b.timestamp,
    "NUMBER": lambda c: c.b.block_number,
    "PREVRANDAO": lambda c: 0,
    "GASLIMIT": lambda c: 30_000_000,
    "CHAINID": lambda c: c.b.chain_id,
    "SELFBALANCE": lambda c: c.b.balances[c.address],
    "BASEFEE": lambda c: 0,
    "PC": lambda c: c.pc,
    "MSIZE": lambda c: len(c.memory),
    "GAS": lambda c: c.b.gas,
}


def caller_value(c: Ctx) -> None:
    c.op("CALLER")


def self_address(c: Ctx) -> None:
    c.op("ADDRESS")


def erc20(decimals: int = 18, extra: dict[str, Program] | None = None) -> Program:
    """A minimal ERC20 with balances in mapping slot 0 and allowances in slot 1.

    ``extra`` adds handlers for further signatures, dispatched before the
    standard ones.
    """
    extra = extra or {}

    def program(c: Ctx) -> None:
        c.prologue()
        sig = c.dispatch([
            *extra,
            "balanceOf(address)",
            "transfer(address,uint256)",
            "transferFrom(address,address,uint256)",
            "approve(address,uint256)",
            "decimals()",
        ])
        if sig in extra:
            extra[sig](c)
            return
        if sig == "balanceOf(address)":
            c.mapping_slot(lambda c: c.arg_address(0), 0).op("SLOAD")
            ptr = c.free_pointer()
            c.push(ptr, OFFSET_WIDTH).op("MSTORE")
            c.push(32).push(ptr, OFFSET_WIDTH).op("RETURN")
            return
        if sig == "decimals()":
            c.ret_words([decimals])
            return
        if sig == "approve(address,uint256)":
            c.mapping_slot(lambda c: c.arg_address(0), 1)
            c.arg(1).op("SWAP1").op("SSTORE")
            _log_transfer(c, APPROVAL_SIG, caller_value, lambda c: c.arg_address(0), lambda c: c.arg(1))
            c.ret_words([1])
            return
        if sig == "transfer(address,uint256)":
            src, dst, amt_i = caller_value, (lambda c: c.arg_address(0)), 1
        else:
            src, dst, amt_i = (lambda c: c.arg_address(0)), (lambda c: c.arg_address(1)), 2
        # require(balance >= amount)
        c.guard(lambda c: (c.arg(amt_i), c.mapping_slot(src, 0), c.op("SLOAD"), c.op("LT"), c.op("ISZERO")))
        c.arg(amt_i)
        c.mapping_slot(src, 0)
        c.op("DUP1").op("SLOAD").op("SWAP1").op("SWAP2").op("SWAP1").op("SUB").op("SWAP1").op("SSTORE")
        c.arg(amt_i)
        c.mapping_slot(dst, 0)
        c.op("DUP1").op("SLOAD").op("SWAP1").op("SWAP2").op("ADD").op("SWAP1").op("SSTORE")
        _log_transfer(c, TRANSFER_SIG, src, dst, lambda c: c.arg(amt_i))
        c.ret_words([1])

    return program


def _log_transfer(c: Ctx, sig: str, src, dst, amount) -> None:
    ptr = c.free_pointer()
    c.mstore(ptr, amount)
    c.emit_value(dst)
    c.emit_value(src)
    c.push(int.from_bytes(keccak(sig.encode()), "big"), 32)
    c.push(32).push(ptr, OFFSET_WIDTH).op("LOG3")


def set_token_balance(builder: TraceBuilder, token: str, holder: str, amount: int) -> None:
    slot = sha3_word(word(int(norm_address(holder), 16)) + word(0))
    builder.storage[(norm_address(token), slot)] = amount


def token_balance(builder: TraceBuilder, token: str, holder: str) -> int:
    slot = sha3_word(word(int(norm_address(holder), 16)) + word(0))
    return builder.storage[(norm_address(token), slot)]


def encode_call(signature: str, *words: int) -> bytes:
    return bytes.fromhex(selector(signature)[2:]) + b"".join(word(w) for w in words)


DEPOSIT_SIG = "Deposit(address,uint256)"
WITHDRAWAL_SIG = "Withdrawal(address,uint256)"


def _weth_deposit(c: Ctx) -> None:
    c.op("CALLVALUE")
    c.mapping_slot(caller_value, 0)
    c.op("DUP1").op("SLOAD").op("SWAP1").op("SWAP2").op("ADD").op("SWAP1").op("SSTORE")
    _log2(c, DEPOSIT_SIG, caller_value, lambda c: c.op("CALLVALUE"))
    c.stop()


def _weth_withdraw(c: Ctx) -> None:
    c.guard(lambda c: (c.arg(0), c.mapping_slot(caller_value, 0), c.op("SLOAD"), c.op("LT"), c.op("ISZERO")))
    c.arg(0)
    c.mapping_slot(caller_value, 0)
    c.op("DUP1").op("SLOAD").op("SWAP1").op("SWAP2").op("SWAP1").op("SUB").op("SWAP1").op("SSTORE")
    c.call_fn("CALL", caller_value, "", (), value=lambda c: c.arg(0), ret_words=0, check_code=False)
    _log2(c, WITHDRAWAL_SIG, caller_value, lambda c: c.arg(0))
    c.stop()


def _log2(c: Ctx, sig: str, who, amount) -> None:
    ptr = c.free_pointer()
    c.mstore(ptr, amount)
    c.emit_value(who)
    c.push(int.from_bytes(keccak(sig.encode()), "big"), 32)
    c.push(32).push(ptr, OFFSET_WIDTH).op("LOG2")


def weth() -> Program:
    """Wrapped native token: ERC20 plus payable deposit() and withdraw(uint256)."""
    return erc20(18, {"deposit()": _weth_deposit, "withdraw(uint256)": _weth_withdraw})
