from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from txlift import fixtures
from txlift.errors import NoBeneficiary
from txlift.fundflow import (
    DEPOSIT_TOPIC,
    NATIVE,
    TRANSFER_TOPIC,
    WITHDRAWAL_TOPIC,
    AssetDelta,
    AssetPriority,
    extract_fund_flow,
    fund_flow,
    identify_beneficiary,
    min_funding,
    synthesize_oracles,
)
from txlift.hexutil import ZERO_ADDRESS, word
from txlift.ingest import LogEntry, TraceStream, ValueTransfer, parse_trace

A = "0x" + "aa" * 20
B = "0x" + "bb" * 20
C = "0x" + "cc" * 20
T = "0x" + "11" * 20
U = "0x" + "22" * 20
E18 = 10**18


def transfer(src, dst, amount, token=T, step=0, reverted=False):
    return LogEntry(step, token, (TRANSFER_TOPIC, int(src, 16), int(dst, 16)), word(amount), reverted)


def stream_of(logs=(), transfers=(), sender=A):
    return TraceStream("0x00", "ethereum", 1, 1, sender, B, logs=list(logs), value_transfers=list(transfers))


def brute_force(events):
    net = Counter()
    for src, dst, amount, token in events:
        if src != ZERO_ADDRESS:
            net[src, token] -= amount
        if dst != ZERO_ADDRESS:
            net[dst, token] += amount
    return {k: v for k, v in net.items() if v}


def as_dict(deltas):
    return {(d.account, d.asset): d.delta for d in deltas}


def test_no_logs_no_deltas():
    assert extract_fund_flow(stream_of()) == []


def test_transfer_and_partial_return():
    deltas = extract_fund_flow(stream_of([transfer(A, B, 100), transfer(B, A, 40)]))
    assert as_dict(deltas) == {(A, T): -60, (B, T): 60}


def test_zero_address_is_a_source_and_sink():
    deltas = extract_fund_flow(stream_of([transfer(ZERO_ADDRESS, A, 5), transfer(A, ZERO_ADDRESS, 2)]))
    assert as_dict(deltas) == {(A, T): 3}


def test_wrap_events_and_native_transfers():
    logs = [
        LogEntry(0, T, (DEPOSIT_TOPIC, int(A, 16)), word(7)),
        LogEntry(1, T, (WITHDRAWAL_TOPIC, int(A, 16)), word(3)),
    ]
    transfers = [ValueTransfer(2, T, A, 3, "CALL"), ValueTransfer(3, A, T, 7, "CALL")]
    got = as_dict(extract_fund_flow(stream_of(logs, transfers)))
    assert got == {(A, T): 4, (A, NATIVE): -4, (T, NATIVE): 4}


def test_reverted_entries_are_ignored():
    logs = [transfer(A, B, 9, reverted=True)]
    transfers = [ValueTransfer(0, A, B, 9, "CALL", reverted=True)]
    assert extract_fund_flow(stream_of(logs, transfers)) == []


def test_malformed_logs_are_skipped_and_counted():
    bad = LogEntry(4, T, (TRANSFER_TOPIC, int(A, 16)), word(1))
    short = LogEntry(5, T, (TRANSFER_TOPIC, int(A, 16), int(B, 16)), b"\x01")
    flow = fund_flow(stream_of([bad, short, transfer(A, B, 1)]))
    assert flow.skipped_logs == 2 and flow.skipped == [4, 5]
    assert as_dict(flow.deltas) == {(A, T): -1, (B, T): 1}


def test_unrelated_topics_are_ignored():
    other = LogEntry(0, T, (12345, int(A, 16)), word(1))
    assert extract_fund_flow(stream_of([other])) == []


accounts = st.sampled_from([A, B, C, ZERO_ADDRESS])
events = st.lists(st.tuples(accounts, accounts, st.integers(0, 2**128), st.sampled_from([T, U])), max_size=30)


@settings(max_examples=200, deadline=None)
@given(events)
def test_deltas_equal_brute_force_sum(evs):
    logs = [transfer(s, d, a, tok, i) for i, (s, d, a, tok) in enumerate(evs)]
    assert as_dict(extract_fund_flow(stream_of(logs))) == brute_force(evs)


@settings(max_examples=100, deadline=None)
@given(events, st.randoms(use_true_random=False))
def test_order_independence(evs, rng):
    logs = [transfer(s, d, a, tok, i) for i, (s, d, a, tok) in enumerate(evs)]
    shuffled = logs[:]
    rng.shuffle(shuffled)
    assert extract_fund_flow(stream_of(logs)) == extract_fund_flow(stream_of(shuffled))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([A, B, C]), st.sampled_from([A, B, C]), st.integers(0, 2**64)),
                max_size=30))
def test_pure_transfers_conserve_each_token(evs):
    deltas = extract_fund_flow(stream_of([transfer(s, d, a) for s, d, a in evs]))
    assert sum(d.delta for d in deltas) == 0
    assert all(d.delta != 0 for d in deltas)


# -- beneficiary ---------------------------------------------------------------


def test_only_sender_gains():
    assert identify_beneficiary([AssetDelta(A, T, 5), AssetDelta(B, T, -5)], A) == A


def test_contract_gains_when_sender_does_not():
    deltas = [AssetDelta(A, T, -1), AssetDelta(C, U, 9)]
    assert identify_beneficiary(deltas, A, attack_contract=B) == C
    assert identify_beneficiary(deltas, A, attack_contract=C) == C


def test_native_outranks_tokens():
    # hand ranking: A's 1 wei of native beats C's large token gain
    deltas = [AssetDelta(A, NATIVE, 1), AssetDelta(C, T, 10**30)]
    assert identify_beneficiary(deltas, A) == A
    assert identify_beneficiary(deltas, B) == A


def test_priority_tiers_decide_before_magnitude():
    p = AssetPriority(wrapped=(T,), stables=(U,))
    deltas = [AssetDelta(B, U, 10**30), AssetDelta(C, T, 1)]
    assert identify_beneficiary(deltas, A, priority=p) == C
    assert identify_beneficiary(deltas, A) == B


def test_no_beneficiary():
    with pytest.raises(NoBeneficiary):
        identify_beneficiary([AssetDelta(A, T, -3)], A)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.builds(AssetDelta, st.sampled_from([A, B, C]), st.sampled_from([NATIVE, T, U]),
                          st.integers(-100, 100).filter(bool)), min_size=1, max_size=10),
       st.randoms(use_true_random=False))
def test_beneficiary_is_deterministic(deltas, rng):
    shuffled = deltas[:]
    rng.shuffle(shuffled)
    try:
        first = identify_beneficiary(deltas, C)
    except NoBeneficiary:
        with pytest.raises(NoBeneficiary):
            identify_beneficiary(shuffled, C)
        return
    assert identify_beneficiary(shuffled, C) == first
    assert any(d.account == first and d.delta > 0 for d in deltas)


# -- oracles -----------------------------------------------------------------


def test_one_assertion_per_gained_asset():
    spec = synthesize_oracles([AssetDelta(A, T, 5), AssetDelta(A, U, -2)], A)
    assert [(x.asset, x.sign, x.magnitude) for x in spec.assets] == [(T, 1, 5)]
    assert spec.min_funding == E18


def test_min_funding_tracks_peak_outflow():
    # running balance: -0.7, -1.2, +0.8 -> peak deficit 1.2
    ts = [ValueTransfer(0, A, B, 7 * E18 // 10, "TX"), ValueTransfer(1, A, C, E18 // 2, "CALL"),
          ValueTransfer(2, B, A, 2 * E18, "CALL")]
    assert min_funding(ts, A) == 12 * E18 // 10
    assert min_funding(ts, A, floor=0) == 12 * E18 // 10
    assert min_funding([], A) == E18
    assert min_funding([], A, floor=5) == 5


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 10**20)), max_size=20))
def test_min_funding_matches_running_minimum(flows):
    ts = [ValueTransfer(i, A, B, amt, "CALL") if out else ValueTransfer(i, B, A, amt, "CALL")
          for i, (out, amt) in enumerate(flows)]
    balance, lowest = 0, 0
    for out, amt in flows:
        balance += -amt if out else amt
        lowest = min(lowest, balance)
    assert min_funding(ts, A, floor=0) == -lowest


# -- fixtures ----------------------------------------------------------------


def test_webkey_attacker_profits_in_usdt(webkey_stream):
    deltas = extract_fund_flow(webkey_stream)
    d = as_dict(deltas)
    assert d[fixtures.ATTACKER, fixtures.USDT] > 0
    assert identify_beneficiary(deltas, fixtures.ATTACKER, fixtures.ATTACK_CONTRACT) == fixtures.ATTACKER
    spec = synthesize_oracles(deltas, fixtures.ATTACKER, webkey_stream.value_transfers, fixtures.ATTACKER)
    assert [a.asset for a in spec.assets] == [fixtures.USDT]
    assert spec.min_funding == E18


def test_webkey_usdt_is_conserved(webkey_stream):
    usdt = [d.delta for d in extract_fund_flow(webkey_stream) if d.asset == fixtures.USDT]
    assert sum(usdt) == 0


def test_flash_swap_pays_out_native():
    stream = parse_trace(fixtures.flash_swap().native())
    deltas = extract_fund_flow(stream)
    d = as_dict(deltas)
    # 10 borrowed + 50 claimed - 10.03 repaid, unwrapped and forwarded
    profit = fixtures.SWAP_OUT + fixtures.LOOT - fixtures.REPAY
    assert d[fixtures.EXPLOITER, NATIVE] == profit
    assert d[fixtures.WBNB, NATIVE] == -profit
    assert (fixtures.RECEIVER, fixtures.WBNB) not in d
    p = AssetPriority.for_chain("bsc")
    assert identify_beneficiary(deltas, fixtures.EXPLOITER, fixtures.RECEIVER, p) == fixtures.EXPLOITER
