"""Net asset deltas per account, beneficiary selection and profit oracles."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from .errors import MalformedLog, NoBeneficiary
from .hexutil import ZERO_ADDRESS, event_topic, norm_address
from .ingest import LogEntry, TraceStream, ValueTransfer

log = logging.getLogger(__name__)

NATIVE = "native"
E18 = 10**18

TRANSFER_TOPIC = event_topic("Transfer(address,address,uint256)")
DEPOSIT_TOPIC = event_topic("Deposit(address,uint256)")
WITHDRAWAL_TOPIC = event_topic("Withdrawal(address,uint256)")

WRAPPED_NATIVE = {
    "ethereum": "0xc02aaa39b223fe8d0a0e5c4f27ead9083c756cc2",
    "bsc": "0xbb4cdb9cbd36b01bd1cbaebf2de08d9173bc095c",
}
STABLES = {
    "ethereum": (
        "0xdac17f958d2ee523a2206206994597c13d831ec7",  # USDT
        "0xa0b86991c6218b36c1d19d4a2e9eb0ce3606eb48",  # USDC
        "0x6b175474e89094c44da98b954eedeac495271d0f",  # DAI
    ),
    "bsc": (
        "0x55d398326f99059ff775485246999027b3197955",  # USDT
        "0xe9e7cea3dedca5984780bafc599bd69add087d56",  # BUSD
        "0x8ac76a51cc950d9822d68b83fe1ad97b32cd580d",  # USDC
    ),
}

TOKEN_NAMES = {
    "0xc02aaa39b223fe8d0a0e5c4f27ead9083c756cc2": "WETH",
    "0xbb4cdb9cbd36b01bd1cbaebf2de08d9173bc095c": "WBNB",
    "0xdac17f958d2ee523a2206206994597c13d831ec7": "USDT",
    "0xa0b86991c6218b36c1d19d4a2e9eb0ce3606eb48": "USDC",
    "0x6b175474e89094c44da98b954eedeac495271d0f": "DAI",
    "0x55d398326f99059ff775485246999027b3197955": "USDT",
    "0xe9e7cea3dedca5984780bafc599bd69add087d56": "BUSD",
    "0x8ac76a51cc950d9822d68b83fe1ad97b32cd580d": "USDC",
}


@dataclass(frozen=True)
class AssetDelta:
    account: str
    asset: str  # NATIVE or a token address
    delta: int


@dataclass(frozen=True)
class AssetAssertion:
    asset: str
    sign: int  # +1: post-balance must exceed pre-balance
    magnitude: int


@dataclass(frozen=True)
class OracleSpec:
    beneficiary: str
    assets: tuple[AssetAssertion, ...]
    min_funding: int


@dataclass
class AssetPriority:
    """Ranks assets when comparing gains across tokens without prices."""

    wrapped: tuple[str, ...] = ()
    stables: tuple[str, ...] = ()

    @classmethod
    def for_chain(cls, chain: str, stables: Iterable[str] | None = None) -> "AssetPriority":
        wrapped = (WRAPPED_NATIVE[chain],) if chain in WRAPPED_NATIVE else ()
        chosen = STABLES.get(chain, ()) if stables is None else stables
        return cls(wrapped, tuple(norm_address(s) for s in chosen))

    def tier(self, asset: str) -> int:
        if asset == NATIVE:
            return 0
        if asset in self.wrapped:
            return 1
        if asset in self.stables:
            return 2
        return 3


@dataclass
class FundFlow:
    deltas: list[AssetDelta]
    skipped_logs: int = 0
    skipped: list[int] = field(default_factory=list)  # step indices of malformed logs


def _topic_address(word: int) -> str:
    return norm_address(word & ((1 << 160) - 1))


def _amount(entry: LogEntry) -> int:
    if len(entry.data) < 32:
        raise MalformedLog(f"log at step {entry.step} carries {len(entry.data)} data bytes")
    return int.from_bytes(entry.data[:32], "big")


def log_movements(entry: LogEntry) -> list[tuple[str, str, int]]:
    """Signed (account, asset, amount) movements described by one log.

    Logs with other topics yield nothing; a known topic with the wrong
    topic count raises MalformedLog.
    """
    if not entry.topics:
        return []
    t0, token = entry.topics[0], norm_address(entry.address)
    if t0 == TRANSFER_TOPIC:
        if len(entry.topics) != 3:
            raise MalformedLog(f"Transfer at step {entry.step} has {len(entry.topics)} topics")
        amount = _amount(entry)
        src, dst = _topic_address(entry.topics[1]), _topic_address(entry.topics[2])
        return [(src, token, -amount), (dst, token, amount)]
    if t0 in (DEPOSIT_TOPIC, WITHDRAWAL_TOPIC):
        if len(entry.topics) != 2:
            raise MalformedLog(f"wrap event at step {entry.step} has {len(entry.topics)} topics")
        amount = _amount(entry)
        who = _topic_address(entry.topics[1])
        return [(who, token, amount if t0 == DEPOSIT_TOPIC else -amount)]
    return []


def transfer_movements(t: ValueTransfer) -> list[tuple[str, str, int]]:
    return [(norm_address(t.sender), NATIVE, -t.amount), (norm_address(t.recipient), NATIVE, t.amount)]


def _fold(movements: Iterable[tuple[str, str, int]]) -> list[AssetDelta]:
    net: dict[tuple[str, str], int] = defaultdict(int)
    for account, asset, amount in movements:
        # the zero address is an unbounded source and sink
        if account != ZERO_ADDRESS:
            net[account, asset] += amount
    return [AssetDelta(a, t, d) for (a, t), d in sorted(net.items()) if d]


def fund_flow(stream: TraceStream) -> FundFlow:
    movements: list[tuple[str, str, int]] = []
    skipped: list[int] = []
    for entry in stream.logs:
        if entry.reverted:
            continue
        try:
            movements += log_movements(entry)
        except MalformedLog as e:
            log.warning("skipping log: %s", e)
            skipped.append(entry.step)
    for t in stream.value_transfers:
        if not t.reverted and t.amount:
            movements += transfer_movements(t)
    return FundFlow(_fold(movements), len(skipped), skipped)


def extract_fund_flow(stream: TraceStream) -> list[AssetDelta]:
    return fund_flow(stream).deltas


def _gain_key(deltas: list[AssetDelta], priority: AssetPriority) -> tuple[int, int] | None:
    gains = [(-priority.tier(d.asset), d.delta) for d in deltas if d.delta > 0]
    return max(gains) if gains else None


def identify_beneficiary(
    deltas: list[AssetDelta],
    sender: str,
    attack_contract: str | None = None,
    priority: AssetPriority | None = None,
) -> str:
    """The account with the best priority-ranked gain, preferring the sender and the attack contract."""
    priority = priority or AssetPriority()
    by_account: dict[str, list[AssetDelta]] = defaultdict(list)
    for d in deltas:
        by_account[d.account].append(d)
    keyed = {a: k for a, ds in by_account.items() if (k := _gain_key(ds, priority)) is not None}
    if not keyed:
        raise NoBeneficiary("no account nets a positive amount of any asset")
    preferred = [norm_address(a) for a in (sender, attack_contract) if a]
    candidates = [a for a in preferred if a in keyed] or sorted(keyed)
    # ties go to the first candidate: sender before contract, then address order
    return max(candidates, key=lambda a: keyed[a])


def min_funding(transfers: Iterable[ValueTransfer], sender: str, floor: int = E18) -> int:
    """Largest running native deficit of ``sender``, never below ``floor``."""
    sender = norm_address(sender)
    running = lowest = 0
    for t in transfers:
        if t.reverted:
            continue
        if norm_address(t.sender) == sender:
            running -= t.amount
        if norm_address(t.recipient) == sender:
            running += t.amount
        lowest = min(lowest, running)
    return max(-lowest, floor)


def synthesize_oracles(
    deltas: list[AssetDelta],
    beneficiary: str,
    transfers: Iterable[ValueTransfer] = (),
    sender: str | None = None,
    floor: int = E18,
) -> OracleSpec:
    beneficiary = norm_address(beneficiary)
    assets = tuple(AssetAssertion(d.asset, 1, d.delta) for d in deltas if d.account == beneficiary and d.delta > 0)
    if not assets:
        raise NoBeneficiary(f"{beneficiary} gains nothing")
    funding = min_funding(transfers, sender or beneficiary, floor)
    return OracleSpec(beneficiary, assets, funding)


def delta_table(deltas: list[AssetDelta]) -> list[dict]:
    return [{"account": d.account, "asset": d.asset, "delta": str(d.delta)} for d in deltas]
