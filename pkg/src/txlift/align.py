"""Greedy, error-directed alignment of an observed PoC run against the ground trace."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import AlignmentError, NoErrorSite, NoMatchInWindow
from .harness import CallSite
from .render import render_const

DEFAULT_WINDOW = 8
# match score weights: selector, target, arguments
W_NAME, W_TARGET, W_ARGS = 0.5, 0.3, 0.2


@dataclass(frozen=True)
class TraceDiff:
    address_alignment: dict[str, str]  # observed -> ground
    error_site: int  # index into the observed calls
    matched_pair: tuple[CallSite, CallSite]  # (expected, observed)
    score: float
    summary: str


def align_addresses(observed_created: list[str], ground_created: list[str]) -> dict[str, str]:
    """Pair created contracts by creation order."""
    if len(observed_created) != len(ground_created):
        raise AlignmentError(f"observed run created {len(observed_created)} contracts, "
                             f"the ground trace {len(ground_created)}")
    return dict(zip(observed_created, ground_created))


def _subtree_end(calls: list[CallSite], i: int) -> int:
    end = i
    while end + 1 < len(calls) and calls[end + 1].depth > calls[i].depth:
        end += 1
    return end


def failing_call(calls: list[CallSite]) -> int:
    """Index of the innermost reverted call under the first reverted call."""
    for i, c in enumerate(calls):
        if c.status != "reverted":
            continue
        origin = i
        # descend while a reverted call sits inside the current one
        j = i + 1
        while j < len(calls) and calls[j].depth > calls[origin].depth:
            if calls[j].status == "reverted":
                origin = j
            j += 1
        return origin
    raise NoErrorSite("the observed run did not revert")


def error_site(calls: list[CallSite]) -> int:
    """Where the first revert surfaces: the end of the innermost failing call's subtree."""
    return _subtree_end(calls, failing_call(calls))


def same_calls_different_outcome(ground: list[CallSite], observed: list[CallSite],
                                 alignment: dict[str, str] | None = None) -> bool:
    """True when the failing call and everything it made match a successful ground call exactly.

    The PoC then issues the right calls and still reverts, which points at chain
    state the ground transaction relied on rather than at the PoC logic.
    """
    try:
        o = failing_call(observed)
    except NoErrorSite:
        return False
    sub = observed[o : _subtree_end(observed, o) + 1]
    for gi, g in enumerate(ground):
        if g.status != "ok" or match_score(g, observed[o], alignment) < 1.0:
            continue
        expected = ground[gi : _subtree_end(ground, gi) + 1]
        if len(sub) <= len(expected) and all(match_score(a, b, alignment) >= 1.0 for a, b in zip(expected, sub)):
            return True
    return False


def _mapped(value: str, alignment: dict[str, str]) -> str:
    return alignment.get(value, value)


def match_score(expected: CallSite, observed: CallSite, alignment: dict[str, str] | None = None) -> float:
    alignment = alignment or {}
    if expected.name != observed.name:
        return 0.0
    score = W_NAME
    if expected.target == _mapped(observed.target, alignment):
        score += W_TARGET
    n = max(len(expected.args), len(observed.args))
    if n == 0:
        score += W_ARGS
    else:
        same = sum(1 for a, b in zip(expected.args, observed.args) if a == _mapped(b, alignment))
        score += W_ARGS * same / n
    return round(score, 6)


def describe(call: CallSite, aliases: dict[str, str]) -> str:
    def arg(a: str) -> str:
        if a in aliases:
            return aliases[a]
        if a.isdigit():
            return render_const(int(a))
        return a

    target = aliases.get(call.target, call.target)
    return f"{target}.{call.name}({', '.join(arg(a) for a in call.args)})"


def align_traces(
    ground: list[CallSite],
    observed: list[CallSite],
    window: int = DEFAULT_WINDOW,
    *,
    ground_created: list[str] | None = None,
    observed_created: list[str] | None = None,
    aliases: dict[str, str] | None = None,
) -> TraceDiff:
    aliases = aliases or {}
    if ground_created is None:
        ground_created = [c.target for c in ground if c.creates and c.status == "ok"]
    if observed_created is None:
        observed_created = [c.target for c in observed if c.creates and c.status == "ok"]
    alignment = align_addresses(observed_created, ground_created)
    site = error_site(observed)

    best: tuple | None = None
    for o in observed[max(0, site - window) : site + window + 1]:
        if o.creates or not o.name:
            continue
        lo, hi = o.index - window, o.index + window
        for g in ground:
            if g.creates or not (lo <= g.index <= hi):
                continue
            s = match_score(g, o, alignment)
            if s == 0:
                continue
            # prefer imperfect matches (a real difference), then higher score, then proximity
            key = (s < 1.0, s, -abs(o.index - site), -abs(g.index - o.index), -o.index)
            if best is None or key > best[0]:
                best = (key, g, o, s)
    if best is None:
        raise NoMatchInWindow(f"no ground call shares a selector with observed calls near index {site}")
    _, g, o, s = best
    named = {k: aliases.get(v, v) for k, v in alignment.items()}
    obs_aliases = {**aliases, **{k: v for k, v in named.items()}}
    if s < 1.0:
        summary = (f"Observed execution with different parameters: {describe(o, obs_aliases)}, "
                   f"but expected: {describe(g, aliases)}")
    else:
        summary = (f"Observed execution reverted after {describe(o, obs_aliases)}, "
                   f"which matches the expected call {describe(g, aliases)}")
    return TraceDiff(alignment, site, (g, o), s, summary)
