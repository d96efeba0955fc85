"""Synthetic incident traces used by the tests, the demo CLI and the docs.

The WebkeyDAO-shaped incident mirrors the public BSC attack: the attacker calls
its contract ``A.wheeaappP``, which borrows 1200 USDT from a DODO-style pool via
``flashLoan``; in the ``DVMFlashLoanCall`` callback it buys and resells wkeyDAO
67 times, repays and sends the profit to the attacker. Addresses of the
attacker, the attack contract, USDT and the router are the real ones; the pool,
its implementation, wkeyDAO and the sale proxy use stand-in addresses.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .hexutil import MASK160, keccak, norm_address
from .synthetic import (
    Ctx,
    Revert,
    TraceBuilder,
    caller_value,
    encode_call,
    erc20,
    self_address,
    set_token_balance,
    weth,
)

E18 = 10**18

ATTACKER = "0x3026c464d3bd6ef0ced0d49e80f171b58176ce32"
ATTACK_CONTRACT = "0x3783c91ee49a303c17c558f92bf8d6395d2f76e3"
DVM = "0x107f3be24e3761a91322aa4f5f54d9f18981530c"
DVM_IMPL = "0x7b8d8a0e3d5a1e4b2c6f9a0d1e2f3a4b5c6d7e8f"
USDT = "0x55d398326f99059ff775485246999027b3197955"
WKEY = "0x194b302a4b0a79795fb68e2adf1b8c9ec5ff8d1f"
SALE_PROXY = "0xd5113bd4c9a0ef7d4c23cc63a6bd7f1a63d2f0a7"
ROUTER = "0x10ed43c718714eb63d5aa57b78b54704e256024e"
WEBKEY_TX = "0xc9bccafdb0cd977556d1f88ac39bf8b455c0275ac1dd4b51d75950fb58bad4c8"
WEBKEY_BLOCK = 45_127_000

WHEEAAPPP = "wheeaappP(address,uint256,address,address,address,uint256)"
FLASHLOAN = "flashLoan(uint256,uint256,address,bytes)"
CALLBACK = "DVMFlashLoanCall(address,uint256,uint256,bytes)"
SWAP = "swapExactTokensForTokensSupportingFeeOnTransferTokens(uint256,uint256,address[],address,uint256)"

LOAN = 1200 * E18
ROUNDS = 67
BUY_PRICE = 1000 * E18
BUY_QTY = 230 * 10**9
SELL_PRICE = 1011 * E18


@dataclass
class Fixture:
    """A finished synthetic run plus the names the tests need."""

    builder: TraceBuilder
    names: dict[str, str] = field(default_factory=dict)

    def native(self) -> str:
        return self.builder.to_native()

    def geth(self) -> str:
        return self.builder.to_geth()

    @property
    def sender(self) -> str:
        return self.builder.sender

    @property
    def to(self) -> str:
        return self.builder.to


def _words(*items: int) -> bytes:
    return b"".join(i.to_bytes(32, "big") for i in items)


def proxy_to(impl: str):
    """EIP-1967-style forwarding proxy: delegatecall everything to ``impl``."""

    def program(c: Ctx) -> None:
        c.prologue()
        c.op("CALLDATASIZE").push(0).push(0).op("CALLDATACOPY")
        c.push(0).push(0).op("CALLDATASIZE").push(0).push(int(impl, 16), 20).op("GAS").op("DELEGATECALL")
        c.op("RETURNDATASIZE").push(0).push(0).op("RETURNDATACOPY")
        ok = c.label()
        c.push(ok, 3).op("JUMPI")
        if c.pc != ok:
            c.op("RETURNDATASIZE").push(0).op("REVERT")
            return
        c.jumpdest()
        c.op("RETURNDATASIZE").push(0).op("RETURN")

    return program


# -- WebkeyDAO-shaped incident -------------------------------------------------


def attack_contract(rounds: int = ROUNDS):
    """Program of the attack contract ``A``; ``rounds`` sets the callback loop count."""
    return lambda c: _attack_contract(c, rounds)


def _attack_contract(c: Ctx, rounds: int) -> None:
    c.prologue()
    sig = c.dispatch([WHEEAAPPP, CALLBACK])
    if sig == WHEEAAPPP:
        c.guard_calldata(6)
        ret = c.call_fn("STATICCALL", lambda c: c.arg_address(0), "_BASE_TOKEN_()")
        # require(returndatasize() >= 32)
        c.guard(lambda c: (c.push(32), c.op("RETURNDATASIZE"), c.op("LT"), c.op("ISZERO")))
        # if (address(base) != quote)
        c.mload(ret).push(MASK160, 20).op("AND")
        c.arg_address(2).op("SWAP1").op("SUB").op("ISZERO")
        other = c.label()
        c.push(other, 3).op("JUMPI")
        if c.pc == other:
            c.jumpdest()
            c.stop()
            return
        c.call_fn(
            "CALL",
            lambda c: c.arg_address(0),
            FLASHLOAN,
            [0, lambda c: c.arg(1), self_address,
             ("bytes", [lambda c: c.arg_address(0), lambda c: c.arg_address(2), lambda c: c.arg(1)])],
            ret_words=0,
        )
        c.stop()
        return

    # DVMFlashLoanCall(sender, baseAmount, quoteAmount, data)
    c.guard_calldata(4)
    c.call_fn("CALL", USDT, "approve(address,uint256)", [int(SALE_PROXY, 16), 2**256 - 1])
    c.call_fn("CALL", WKEY, "approve(address,uint256)", [int(ROUTER, 16), 2**256 - 1])

    def round_(c: Ctx, i: int) -> None:
        c.call_fn("CALL", SALE_PROXY, "buy()", [], ret_words=0)
        bal = c.call_fn("STATICCALL", WKEY, "balanceOf(address)", [self_address])
        c.call_fn(
            "CALL",
            ROUTER,
            SWAP,
            [lambda c: c.mload(bal), 0, ("array", [int(WKEY, 16), int(USDT, 16)]), self_address,
             lambda c: c.op("TIMESTAMP")],
            ret_words=0,
        )

    c.loop(rounds, round_)
    c.call_fn("CALL", USDT, "transfer(address,uint256)", [caller_value, lambda c: c.arg(2)])
    bal = c.call_fn("STATICCALL", USDT, "balanceOf(address)", [self_address])
    c.call_fn("CALL", USDT, "transfer(address,uint256)", [lambda c: c.op("ORIGIN"), lambda c: c.mload(bal)])
    c.stop()


def _dvm_impl(c: Ctx) -> None:
    c.prologue()
    sig = c.dispatch(["_BASE_TOKEN_()", FLASHLOAN])
    if sig == "_BASE_TOKEN_()":
        c.ret_words([lambda c: (c.push(0), c.op("SLOAD"))])
        return
    c.guard_calldata(4)
    quote = lambda c: (c.push(1), c.op("SLOAD"))  # noqa: E731
    c.call_fn("CALL", quote, "transfer(address,uint256)", [lambda c: c.arg_address(2), lambda c: c.arg(1)])
    data_word = lambda j: (lambda c: (c.push(4 + 0xA0 + 32 * j), c.op("CALLDATALOAD")))  # noqa: E731
    c.call_fn(
        "CALL",
        lambda c: c.arg_address(2),
        CALLBACK,
        [caller_value, lambda c: c.arg(0), lambda c: c.arg(1), ("bytes", [data_word(0), data_word(1), data_word(2)])],
        ret_words=0,
    )
    bal = c.call_fn("STATICCALL", quote, "balanceOf(address)", [self_address])
    # require(balance >= reserve)
    c.guard(lambda c: (c.push(2), c.op("SLOAD"), c.mload(bal), c.op("LT"), c.op("ISZERO")))
    c.stop()


def _sale_proxy(c: Ctx) -> None:
    c.prologue()
    c.dispatch(["buy()"])
    c.call_fn("CALL", USDT, "transferFrom(address,address,uint256)", [caller_value, self_address, BUY_PRICE])
    c.call_fn("CALL", WKEY, "transfer(address,uint256)", [caller_value, BUY_QTY])
    c.stop()


def _router(c: Ctx) -> None:
    c.prologue()
    c.dispatch([SWAP])
    c.call_fn("CALL", WKEY, "transferFrom(address,address,uint256)", [caller_value, self_address, lambda c: c.arg(0)])

    def amount_out(c: Ctx) -> None:
        c.push(BUY_QTY).push(SELL_PRICE).arg(0).op("MUL").op("DIV")

    c.call_fn("CALL", USDT, "transfer(address,uint256)", [lambda c: c.arg_address(3), amount_out])
    c.stop()


def webkey(capture_memory: bool = False, rounds: int = ROUNDS) -> Fixture:
    """The WebkeyDAO-shaped incident (see module docstring)."""
    calldata = encode_call(WHEEAAPPP, int(DVM, 16), LOAN, int(USDT, 16), int(WKEY, 16), int(SALE_PROXY, 16), rounds)
    b = TraceBuilder(
        sender=ATTACKER,
        to=ATTACK_CONTRACT,
        input=calldata,
        chain="bsc",
        chain_id=56,
        block_number=WEBKEY_BLOCK,
        tx_hash=WEBKEY_TX,
        capture_memory=capture_memory,
    )
    b.deploy(ATTACK_CONTRACT, attack_contract(rounds))
    b.deploy(DVM, proxy_to(DVM_IMPL))
    b.deploy(DVM_IMPL, _dvm_impl)
    b.deploy(USDT, erc20(18))
    b.deploy(WKEY, erc20(9))
    b.deploy(SALE_PROXY, _sale_proxy)
    b.deploy(ROUTER, _router)
    b.storage[(DVM, 0)] = int(WKEY, 16)
    b.storage[(DVM, 1)] = int(USDT, 16)
    b.storage[(DVM, 2)] = 100_000 * E18
    set_token_balance(b, USDT, DVM, 100_000 * E18)
    set_token_balance(b, USDT, ROUTER, 1_000_000 * E18)
    set_token_balance(b, WKEY, SALE_PROXY, 10**9 * 10**9)
    b.balances[ATTACKER] = 5 * E18
    b.run()
    names = {
        ATTACKER: "attacker",
        ATTACK_CONTRACT: "A",
        DVM: "B",
        DVM_IMPL: "C",
        USDT: "USDT",
        WKEY: "wkeyDAO",
        SALE_PROXY: "saleProxy",
        ROUTER: "router",
    }
    return Fixture(b, names)


# -- small structural fixtures -------------------------------------------------

USER = "0x00000000000000000000000000000000000a11ce"
A0 = "0xa0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0a0"
POOL = "0xb0b0b0b0b0b0b0b0b0b0b0b0b0b0b0b0b0b0b0b0"
LIBRARY = "0xc0c0c0c0c0c0c0c0c0c0c0c0c0c0c0c0c0c0c0c0"
TOKEN = "0xd0d0d0d0d0d0d0d0d0d0d0d0d0d0d0d0d0d0d0d0"


def _builder(to: str, sig: str, *args: int, capture_memory: bool = False, **kw) -> TraceBuilder:
    return TraceBuilder(sender=USER, to=to, input=encode_call(sig, *args), block_number=18_000_000,
                        chain="ethereum", chain_id=1, tx_hash="0x" + keccak(sig.encode()).hex(),
                        capture_memory=capture_memory, **kw)


def no_calls(capture_memory: bool = False) -> Fixture:
    """A single context that only touches its own storage."""

    def program(c: Ctx) -> None:
        c.prologue()
        c.dispatch(["poke(uint256)"])
        c.push(0).op("SLOAD").arg(0).op("ADD").push(0).op("SSTORE")
        c.stop()

    b = _builder(A0, "poke(uint256)", 7, capture_memory=capture_memory)
    b.deploy(A0, program)
    return Fixture(b.run(), {A0: "A"})


def callbacks(k: int = ROUNDS, capture_memory: bool = False) -> Fixture:
    """``A.run`` asks a pool for ``k`` flash callbacks with identical calldata."""

    def attacker(c: Ctx) -> None:
        c.prologue()
        sig = c.dispatch(["run()", "onFlash(uint256)"])
        if sig == "run()":
            c.loop(k, lambda c, i: c.call_fn("CALL", POOL, "flash(uint256)", [1], ret_words=0))
        else:
            c.push(0).op("SLOAD").arg(0).op("ADD").push(0).op("SSTORE")
        c.stop()

    def pool(c: Ctx) -> None:
        c.prologue()
        c.dispatch(["flash(uint256)"])
        c.push(1).op("SLOAD").push(1).op("ADD").push(1).op("SSTORE")
        c.call_fn("CALL", caller_value, "onFlash(uint256)", [lambda c: c.arg(0)], ret_words=0)
        c.stop()

    b = _builder(A0, "run()", capture_memory=capture_memory)
    b.deploy(A0, attacker)
    b.deploy(POOL, pool)
    return Fixture(b.run(), {A0: "A", POOL: "pool"})


CHILD_INITCODE = b"\x60\x80\x60\x40\x52" + keccak(b"child") + b"\x00" * 27


def create2_delegate(capture_memory: bool = False) -> Fixture:
    """A0 CREATE2-deploys X; ``X.go`` delegatecalls library L, which moves tokens."""

    def a0(c: Ctx) -> None:
        c.prologue()
        c.dispatch(["attack()"])
        c.create(CHILD_INITCODE, salt=0x5A17)
        c.push(0).op("SSTORE")
        x = lambda c: (c.push(0), c.op("SLOAD"))  # noqa: E731
        c.call_fn("CALL", x, "go()", [], ret_words=0)
        c.call_fn("STATICCALL", TOKEN, "balanceOf(address)", [x])
        c.stop()

    def child_ctor(c: Ctx) -> None:
        c.prologue()
        c.op("CALLER").push(0).op("SSTORE")
        c.push(0).push(0).op("RETURN")

    def child(c: Ctx) -> None:
        c.prologue()
        c.dispatch(["go()"])
        c.call_fn("DELEGATECALL", LIBRARY, "work(uint256)", [3], ret_words=0)
        c.stop()

    def library(c: Ctx) -> None:
        c.prologue()
        c.dispatch(["work(uint256)"])
        c.call_fn("CALL", TOKEN, "transfer(address,uint256)", [lambda c: c.op("ORIGIN"), lambda c: c.arg(0)])
        c.stop()

    b = _builder(A0, "attack()", capture_memory=capture_memory)
    b.deploy(A0, a0)
    b.deploy(LIBRARY, library)
    b.deploy(TOKEN, erc20())
    b.register_initcode(CHILD_INITCODE, child, child_ctor)
    salt = (0x5A17).to_bytes(32, "big")
    x_addr = norm_address(keccak(b"\xff" + bytes.fromhex(A0[2:]) + salt + keccak(CHILD_INITCODE))[12:])
    set_token_balance(b, TOKEN, x_addr, 10)
    b.run()
    return Fixture(b, {A0: "A", x_addr: "X", LIBRARY: "L", TOKEN: "T"})


# -- flash swap with native payout ---------------------------------------------

EXPLOITER = "0x50fd1e2b3ab3c3f8ad6e0d3bd8e0f1a8c9e7d6b5"
RECEIVER = "0xe63a5c68a3b1f2c4d5e6f708192a3b4c5d6e7f80"
CAKE_LP = "0x58f876857a02d6762e0101bb5c46a8c1ed44dc16"
WBNB = "0xbb4cdb9cbd36b01bd1cbaebf2de08d9173bc095c"
VICTIM = "0x3a6d8ca21d1cf76f653a67577fa0d27453350dd8"
FLASH_SWAP_TX = "0x" + keccak(b"flash-swap-fixture").hex()
FLASH_SWAP_BLOCK = 29_000_000
SWAP_OUT = 10 * E18
REPAY = 10_030 * 10**15
LOOT = 50 * E18
PAIR_SWAP = "swap(uint256,uint256,address,bytes)"
PANCAKE_CALL = "pancakeCall(address,uint256,uint256,bytes)"
INSUFFICIENT = b"Pancake: INSUFFICIENT_INPUT_AMOUNT"


def receiver_program(repay_to: str = "sender"):
    """The exploiter's receiver; ``repay_to`` picks who receives the flash-swap repayment."""

    def program(c: Ctx) -> None:
        c.prologue()
        paid = c.label()
        c.op("CALLDATASIZE").op("ISZERO").push(paid, 3).op("JUMPI")
        if c.pc == paid:
            c.jumpdest()
            c.stop()
            return
        sig = c.dispatch(["attack()", PANCAKE_CALL])
        if sig == "attack()":
            c.call_fn("CALL", CAKE_LP, PAIR_SWAP, [SWAP_OUT, 0, self_address, ("bytes", [1])], ret_words=0)
            bal = c.call_fn("STATICCALL", WBNB, "balanceOf(address)", [self_address])
            c.call_fn("CALL", WBNB, "withdraw(uint256)", [lambda c: c.mload(bal)], ret_words=0)
            c.call_fn("CALL", lambda c: c.op("ORIGIN"), "", (), value=lambda c: c.op("SELFBALANCE"),
                      ret_words=0, check_code=False)
            c.stop()
            return
        c.call_fn("CALL", VICTIM, "claim(uint256)", [LOOT], ret_words=0)
        dest = caller_value if repay_to == "sender" else (lambda c: c.op("ORIGIN"))
        c.call_fn("CALL", WBNB, "transfer(address,uint256)", [dest, REPAY])
        c.stop()

    return program


def _pair(c: Ctx) -> None:
    c.prologue()
    c.dispatch([PAIR_SWAP])
    c.call_fn("CALL", WBNB, "transfer(address,uint256)", [lambda c: c.arg_address(2), lambda c: c.arg(0)])
    c.call_fn("CALL", lambda c: c.arg_address(2), PANCAKE_CALL,
              [caller_value, lambda c: c.arg(0), lambda c: c.arg(1), ("bytes", [1])], ret_words=0)
    bal = c.call_fn("STATICCALL", WBNB, "balanceOf(address)", [self_address])
    ok = c.label()
    c.push(0).op("SLOAD").mload(bal).op("LT").op("ISZERO").push(ok, 3).op("JUMPI")
    if c.pc != ok:
        c.mstore(0, int.from_bytes(INSUFFICIENT.ljust(32, b"\x00"), "big"))
        c.push(len(INSUFFICIENT)).push(0).op("REVERT")
        raise Revert()
    c.jumpdest()
    c.mload(bal).push(0).op("SSTORE")
    c.mstore(0, lambda c: c.mload(bal))
    c.push(int.from_bytes(keccak(b"Sync(uint112,uint112)"), "big"), 32).push(32).push(0).op("LOG1")
    c.stop()


def _victim(c: Ctx) -> None:
    c.prologue()
    c.dispatch(["claim(uint256)"])
    c.call_fn("CALL", WBNB, "transfer(address,uint256)", [caller_value, lambda c: c.arg(0)])
    c.stop()


def flash_swap(repay_to: str = "sender", capture_memory: bool = False) -> Fixture:
    """A flash swap whose callback drains a victim and repays the pair.

    With ``repay_to="origin"`` the repayment goes to the wrong account and the
    pair reverts with an insufficient-input error.
    """
    b = TraceBuilder(sender=EXPLOITER, to=RECEIVER, input=encode_call("attack()"), chain="bsc", chain_id=56,
                     block_number=FLASH_SWAP_BLOCK, tx_hash=FLASH_SWAP_TX, capture_memory=capture_memory)
    b.deploy(RECEIVER, receiver_program(repay_to))
    b.deploy(CAKE_LP, _pair)
    b.deploy(WBNB, weth())
    b.deploy(VICTIM, _victim)
    set_token_balance(b, WBNB, CAKE_LP, 1_000 * E18)
    set_token_balance(b, WBNB, VICTIM, 500 * E18)
    b.storage[(CAKE_LP, 0)] = 1_000 * E18
    b.balances[WBNB] = 10_000 * E18
    b.balances[EXPLOITER] = E18
    b.run()
    names = {EXPLOITER: "attacker", RECEIVER: "Receiver", CAKE_LP: "Cake-LP", WBNB: "wbnb", VICTIM: "victim"}
    return Fixture(b, names)


# -- randomized traces ---------------------------------------------------------


def random_trace(seed: int, max_calls: int = 20, capture_memory: bool = False) -> Fixture:
    """A random call tree over a handful of generic contracts.

    Mixes CALL, STATICCALL, DELEGATECALL, CALLCODE, CREATE and CREATE2, with
    occasional reverting callees. Calldata is drawn from a small set so that
    aggregation keys repeat.
    """
    rng = random.Random(seed)
    pool = [norm_address(keccak(f"rand-{seed}-{i}".encode())[12:]) for i in range(5)]
    sigs = ["f(uint256)", "g(uint256)", "h(uint256)"]
    budget = [max_calls]
    created = [0]

    def generic(c: Ctx) -> None:
        c.prologue()
        for _ in range(rng.randint(1, 4)):
            r = rng.random()
            if r < 0.25:
                c.push(rng.randrange(1, 100)).push(rng.randrange(1, 100)).op("ADD").op("POP")
            elif r < 0.35 and not c.static:
                c.push(rng.randrange(1, 1000)).push(rng.randrange(8)).op("SSTORE")
            elif r < 0.45:
                c.push(rng.randrange(8)).op("SLOAD").op("POP")
            elif budget[0] > 0 and c.depth < 7:
                budget[0] -= 1
                kind = rng.choice(["CALL", "CALL", "STATICCALL", "DELEGATECALL", "CALLCODE", "CREATE", "CREATE2"])
                if kind in ("CREATE", "CREATE2"):
                    if c.static:
                        continue
                    created[0] += 1
                    code = keccak(f"init-{seed}-{created[0]}".encode())
                    c.b.register_initcode(code, generic, generic if rng.random() < 0.5 else None)
                    c.create(code, salt=created[0] if kind == "CREATE2" else None).op("POP")
                else:
                    target = int(rng.choice(pool), 16)
                    c.call_fn(kind, target, rng.choice(sigs), [rng.randrange(2)], check_code=False,
                              check_success=False)
        if c.depth > 1 and rng.random() < 0.1:
            raise Revert()
        c.stop()

    b = TraceBuilder(sender=USER, to=pool[0], input=encode_call("f(uint256)", 0), chain="ethereum", chain_id=1,
                     block_number=18_000_000 + seed, tx_hash="0x" + keccak(f"tx-{seed}".encode()).hex(),
                     capture_memory=capture_memory)
    for a in pool:
        b.deploy(a, generic)
    b.run()
    return Fixture(b, {a: f"R{i}" for i, a in enumerate(pool)})
