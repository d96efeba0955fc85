"""Placeholder completion and the budgeted syntax and semantic repair loops."""

from __future__ import annotations

import json
import re
import textwrap
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

from .align import DEFAULT_WINDOW, TraceDiff, align_traces, describe, same_calls_different_outcome
from .errors import (
    AlignmentError,
    BudgetExhausted,
    HarnessFailure,
    MarkerMissing,
    NoErrorSite,
    NoMatchInWindow,
    ProviderError,
    ProviderRefusal,
    ProviderTimeout,
)
from .fundflow import OracleSpec
from .harness import CallSite, Harness, RunResult, asset_label
from .provider import CompletionProvider
from .sketch import MARKERS, PocSketch

SYNTAX_BUDGET = 5
SEMANTIC_BUDGET = 3
AUX_SYNTAX_BUDGET = 3

# response section headers, one per placeholder
SECTION = {name: f"//== {key}" for name, key in
           (("AttackLogic", "ATTACK_LOGIC"), ("OtherFunctions", "OTHER_FUNCTIONS"), ("OtherContracts", "OTHER_CONTRACTS"))}


class Status(str, Enum):
    READABLE = "Readable"
    RUNNABLE = "Runnable"
    VERIFIABLE = "Verifiable"
    FAILED = "Failed"


class Failure(str, Enum):
    R1 = "Timeout"
    R2 = "SyntaxRepairFailure"
    R3 = "IncompleteContext"
    R4 = "ExecutionFailure"
    R5 = "SemanticRepairFailure"


RANK = {Status.READABLE: 0, Status.RUNNABLE: 1, Status.VERIFIABLE: 2}


@dataclass
class Budgets:
    syntax: int = SYNTAX_BUDGET
    semantic: int = SEMANTIC_BUDGET
    aux_syntax: int = AUX_SYNTAX_BUDGET


@dataclass
class Record:
    kind: str  # completion | syntax | aux_syntax | semantic | build | run
    prompt: str = ""
    response: str = ""
    diagnostics: list[str] = field(default_factory=list)
    status: str = ""


@dataclass
class RefinementSession:
    poc_source: str
    budgets: Budgets = field(default_factory=Budgets)
    syntax_iterations_used: int = 0
    semantic_iterations_used: int = 0
    aux_syntax_used: list[int] = field(default_factory=list)  # one entry per semantic iteration
    transcript: list[Record] = field(default_factory=list)
    status: Status = Status.READABLE
    failure: Failure | None = None
    detail: str = ""
    last_diff: TraceDiff | None = None
    history: list[Status] = field(default_factory=list)

    def advance(self, status: Status) -> None:
        """Raise the status; it never moves back down."""
        if self.status is Status.FAILED:
            return
        if RANK[status] > RANK[self.status]:
            self.status = status
            self.history.append(status)

    def fail(self, failure: Failure, detail: str = "") -> "RefinementSession":
        if self.status is not Status.VERIFIABLE:
            self.status = Status.FAILED
            self.failure = failure
            self.detail = detail
            self.history.append(Status.FAILED)
        return self

    @property
    def label(self) -> str:
        return f"Failed({self.failure.name})" if self.status is Status.FAILED else self.status.value

    def provider_rounds(self) -> int:
        return sum(1 for r in self.transcript if r.kind in ("completion", "syntax", "aux_syntax", "semantic"))

    def to_json(self) -> str:
        return json.dumps({
            "status": self.label,
            "failure": self.failure.value if self.failure else None,
            "detail": self.detail,
            "syntax_iterations_used": self.syntax_iterations_used,
            "semantic_iterations_used": self.semantic_iterations_used,
            "aux_syntax_used": self.aux_syntax_used,
            "transcript": [asdict(r) for r in self.transcript],
        }, indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


# -- completion --------------------------------------------------------------------

COMPLETION_PROMPT = """Complete the Foundry exploit reproduction test below.
Fill each placeholder using the decompiled pseudocode of the attack functions.
Reply with exactly three sections, each starting with its header line:
{headers}
Put only the code that replaces the placeholder under each header.

### Sketch
{sketch}
### Pseudocode
{pseudocode}
"""


def completion_prompt(sketch: PocSketch, pseudocode: str) -> str:
    return COMPLETION_PROMPT.format(headers="\n".join(SECTION.values()), sketch=sketch.source_text,
                                    pseudocode=pseudocode or "(none)")


def strip_fences(text: str) -> str:
    m = re.search(r"```(?:\w+)?\n(.*?)```", text, re.S)
    return m.group(1) if m else text


def parse_sections(response: str) -> dict[str, str]:
    text = strip_fences(response)
    found: dict[str, list[str]] = {}
    current = None
    headers = {v: k for k, v in SECTION.items()}
    for line in text.splitlines():
        if line.strip() in headers:
            current = headers[line.strip()]
            found[current] = []
        elif current is not None:
            found[current].append(line)
    missing = [SECTION[k] for k in SECTION if k not in found]
    if missing:
        raise MarkerMissing(f"response lacks {', '.join(missing)}")
    return {k: "\n".join(v).strip("\n") for k, v in found.items()}


def merge(source: str, sections: dict[str, str]) -> str:
    """Replace each marker with its section, indented like the marker."""
    for name, marker in MARKERS.items():
        m = re.search(rf"^([ \t]*){re.escape(marker)}[ \t]*$", source, re.M)
        if m is None:
            raise MarkerMissing(f"sketch lacks {marker}")
        pad = m.group(1)
        body = "\n".join((pad + ln if ln.strip() else "") for ln in textwrap.dedent(sections[name]).splitlines())
        source = source[: m.start()] + body + source[m.end():]
    return source


def complete_sketch(sketch: PocSketch, pseudocode: str, provider: CompletionProvider,
                    session: RefinementSession | None = None) -> str:
    prompt = completion_prompt(sketch, pseudocode)
    response = provider.complete(prompt)
    if session is not None:
        session.transcript.append(Record("completion", prompt, response))
    return merge(sketch.source_text, parse_sections(response))


# -- syntax repair -------------------------------------------------------------------

SYNTAX_PROMPT = """The Solidity test below fails to compile. Fix only the reported errors.
Reply with the complete corrected file.

### Source
{source}
### Compiler errors
{errors}
"""


def syntax_prompt(source: str, diagnostics: list[str]) -> str:
    return SYNTAX_PROMPT.format(source=source, errors="\n".join(diagnostics))


def _repair(session: RefinementSession, diagnostics: list[str], provider: CompletionProvider, kind: str) -> None:
    # stateless: the prompt is built from the current snapshot and errors only
    prompt = syntax_prompt(session.poc_source, diagnostics)
    response = provider.complete(prompt)
    session.transcript.append(Record(kind, prompt, response, list(diagnostics)))
    session.poc_source = strip_fences(response).strip("\n") + "\n"


def syntax_refine(session: RefinementSession, diagnostics: list[str], provider: CompletionProvider) -> RefinementSession:
    """One repair round against the main syntax budget."""
    if not diagnostics:
        return session
    if session.syntax_iterations_used >= session.budgets.syntax:
        raise BudgetExhausted(f"syntax budget of {session.budgets.syntax} used up")
    session.syntax_iterations_used += 1
    _repair(session, diagnostics, provider, "syntax")
    return session


def _build(session: RefinementSession, harness: Harness) -> list[str]:
    result = harness.build(session.poc_source)
    session.transcript.append(Record("build", diagnostics=list(result.diagnostics),
                                     status="ok" if result.ok else "error"))
    return [] if result.ok else (result.diagnostics or ["compilation failed"])


def syntax_loop(session: RefinementSession, provider: CompletionProvider, harness: Harness) -> bool:
    """Compile and repair until the source builds or the budget runs out."""
    while True:
        diagnostics = _build(session, harness)
        if not diagnostics:
            session.advance(Status.RUNNABLE)
            return True
        try:
            syntax_refine(session, diagnostics, provider)
        except BudgetExhausted as e:
            session.fail(Failure.R2, str(e))
            return False


# -- profit validation ---------------------------------------------------------------


def validate_profit(run: RunResult, oracle: OracleSpec, aliases: dict[str, str] | None = None) -> bool:
    """True iff every oracle asset moved in its expected direction."""
    if run.infra_error:
        raise HarnessFailure(run.infra_error)
    aliases = aliases or {}
    for a in oracle.assets:
        pair = run.balances.get(asset_label(a.asset, aliases))
        if pair is None:
            return False
        pre, post = pair
        if (post - pre) * a.sign <= 0:
            return False
    return True


# -- semantic repair -----------------------------------------------------------------

SEMANTIC_PROMPT = """The Solidity test below compiles but does not reproduce the expected profit.
Trace comparison around the first runtime error:
expected call: {expected}
observed call: {observed}
{summary}
Reply with the complete corrected file.

### Source
{source}
"""

NO_DIFF_PROMPT = """The Solidity test below compiles but does not reproduce the expected profit.
{summary}
Reply with the complete corrected file.

### Source
{source}
"""


def semantic_prompt(source: str, diff: TraceDiff | None, summary: str = "") -> str:
    if diff is None:
        return NO_DIFF_PROMPT.format(summary=summary, source=source)
    g, o = diff.matched_pair
    return SEMANTIC_PROMPT.format(expected=describe(g, {}), observed=describe(o, {}), summary=diff.summary,
                                  source=source)


def semantic_refine(session: RefinementSession, diff: TraceDiff | None, provider: CompletionProvider,
                    harness: Harness, summary: str = "") -> bool:
    """One semantic iteration, including its auxiliary syntax repairs.

    Returns True when the patched source builds.
    """
    if session.semantic_iterations_used >= session.budgets.semantic:
        raise BudgetExhausted(f"semantic budget of {session.budgets.semantic} used up")
    session.semantic_iterations_used += 1
    session.aux_syntax_used.append(0)
    prompt = semantic_prompt(session.poc_source, diff, summary)
    response = provider.complete(prompt)
    session.transcript.append(Record("semantic", prompt, response, [diff.summary] if diff else [summary]))
    session.poc_source = strip_fences(response).strip("\n") + "\n"
    while True:
        diagnostics = _build(session, harness)
        if not diagnostics:
            return True
        if session.aux_syntax_used[-1] >= session.budgets.aux_syntax:
            return False
        session.aux_syntax_used[-1] += 1
        _repair(session, diagnostics, provider, "aux_syntax")


def _diff(ground: list[CallSite], run: RunResult, window: int, aliases: dict[str, str],
          ground_created: list[str] | None) -> tuple[TraceDiff | None, str]:
    try:
        return align_traces(ground, run.calls, window, aliases=aliases, ground_created=ground_created), ""
    except NoErrorSite:
        return None, "The run finished without errors but the balance checks did not pass."
    except (NoMatchInWindow, AlignmentError) as e:
        return None, f"The run failed ({run.error or 'revert'}); no aligned call was found: {e}"


def refine(
    sketch: PocSketch,
    pseudocode: str,
    provider: CompletionProvider,
    harness: Harness | None,
    ground: list[CallSite],
    oracle: OracleSpec,
    *,
    budgets: Budgets | None = None,
    window: int = DEFAULT_WINDOW,
    ground_created: list[str] | None = None,
) -> RefinementSession:
    """Complete the sketch, then repair it until the profit oracle holds or budgets run out."""
    session = RefinementSession(sketch.source_text, budgets or Budgets())
    try:
        session.poc_source = complete_sketch(sketch, pseudocode, provider, session)
    except ProviderTimeout as e:
        return session.fail(Failure.R1, f"completion timed out: {e}")
    except (ProviderError, MarkerMissing) as e:
        return session.fail(Failure.R2, f"completion unusable: {e}")
    session.history.append(Status.READABLE)
    if harness is None:
        return session
    aliases = sketch.prompt_aliases()
    try:
        if not syntax_loop(session, provider, harness):
            return session
        while True:
            run = harness.run(session.poc_source)
            session.transcript.append(Record("run", diagnostics=[run.error] if run.error else [],
                                             status="ok" if run.ok else "error"))
            if validate_profit(run, oracle, sketch.aliases):
                session.advance(Status.VERIFIABLE)
                return session
            diff, summary = _diff(ground, run, window, aliases, ground_created)
            session.last_diff = diff
            while True:
                if session.semantic_iterations_used >= session.budgets.semantic:
                    alignment = diff.address_alignment if diff is not None else {}
                    if same_calls_different_outcome(ground, run.calls, alignment):
                        return session.fail(Failure.R3, "the expected calls were made and still reverted; "
                                            "preparatory state is likely missing")
                    return session.fail(Failure.R5, diff.summary if diff else summary)
                if semantic_refine(session, diff, provider, harness, summary):
                    break
                summary = "The previous patch did not compile; keep its intent and fix the errors."
    except HarnessFailure as e:
        return session.fail(Failure.R4, str(e))
    except ProviderTimeout as e:
        return session.fail(Failure.R1, f"provider timed out: {e}")
    except ProviderRefusal as e:
        return session.fail(Failure.R5, f"provider refused: {e}")
    except ProviderError as e:
        # a provider outage is charged to the repair stage it interrupted
        stage = Failure.R5 if session.status is Status.RUNNABLE else Failure.R2
        return session.fail(stage, f"provider failed: {e}")
