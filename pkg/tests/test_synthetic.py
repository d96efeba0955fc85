from txlift import fixtures
from txlift.fixtures import ATTACKER, DVM, E18, USDT
from txlift.hexutil import selector
from txlift.synthetic import Ctx, TraceBuilder, encode_call, erc20, set_token_balance, token_balance


def test_webkey_economics(webkey_fx):
    b = webkey_fx.builder
    assert token_balance(b, USDT, ATTACKER) == 737 * E18
    assert token_balance(b, USDT, DVM) == 100_000 * E18


def test_erc20_transfer_moves_balance_and_logs():
    a, t, e = "0x" + "aa" * 20, "0x" + "bb" * 20, "0x" + "cc" * 20

    def prog(c: Ctx):
        c.prologue()
        c.call_fn("CALL", t, "transfer(address,uint256)", [int(e, 16), 5])

    b = TraceBuilder(sender="0x" + "11" * 20, to=a)
    b.deploy(a, prog)
    b.deploy(t, erc20())
    set_token_balance(b, t, a, 100)
    b.run()
    assert token_balance(b, t, a) == 95 and token_balance(b, t, e) == 5
    assert len(b.logs) == 1


def test_failed_inner_call_rolls_back_storage():
    a, t, e = "0x" + "aa" * 20, "0x" + "bb" * 20, "0x" + "cc" * 20

    def prog(c: Ctx):
        c.prologue()
        c.call_fn("CALL", t, "transfer(address,uint256)", [int(e, 16), 500], check_success=False)

    b = TraceBuilder(sender="0x" + "11" * 20, to=a)
    b.deploy(a, prog)
    b.deploy(t, erc20())
    set_token_balance(b, t, a, 100)
    b.run()
    assert token_balance(b, t, a) == 100
    assert b.records[-1]["op"] == "STOP"


def test_encode_call():
    data = encode_call("f(uint256)", 1)
    assert data[:4].hex() == selector("f(uint256)")[2:] and len(data) == 36


def test_loop_reuses_pcs():
    fx = fixtures.callbacks(k=3)
    calls = [r["pc"] for r in fx.builder.records if r["op"] == "CALL" and r["depth"] == 1]
    assert len(calls) == 3 and len(set(calls)) == 1
