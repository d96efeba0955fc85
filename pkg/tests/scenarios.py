"""Scripted providers, harnesses and end-to-end scenarios shared by several test modules."""

import dataclasses
import itertools

from txlift import fixtures
from txlift.config import PipelineConfig
from txlift.fundflow import E18, NATIVE, AssetAssertion, OracleSpec
from txlift.harness import CallSite, RunResult, StubHarness, run_result_from_stream
from txlift.ingest import parse_trace
from txlift.pipeline import replay_harness, run_pipeline
from txlift.provider import MockProvider
from txlift.refine import RANK, SECTION, Status, refine
from txlift.sketch import SketchMeta, build_sketch
from txlift.synthetic import encode_call

COMPLETION = "Complete the Foundry"
SEMANTIC = "The Solidity test below compiles"


def sections(attack="", others="", contracts=""):
    return "\n".join([SECTION["AttackLogic"], attack, SECTION["OtherFunctions"], others,
                      SECTION["OtherContracts"], contracts])


def source_of(prompt):
    return prompt.split("### Source\n", 1)[1].split("\n### ", 1)[0]


# -- webkey ---------------------------------------------------------------------------------

WHEEAAPPP_BODY = """\
address base = IContract_107f3be2(Contract_107f3be2)._BASE_TOKEN_();
if (base != USDT) {
    bytes memory data = abi.encode(Contract_107f3be2, USDT, 1200 ether);
    IContract_107f3be2(Contract_107f3be2).flashLoan(0, 1200 ether, address(this), data);
}"""


def webkey_raw():
    return fixtures.webkey().native().encode()


def webkey_provider():
    return MockProvider(fallback=lambda p: sections(WHEEAAPPP_BODY) if p.startswith(COMPLETION) else source_of(p))


# -- the callback that repays the wrong account ---------------------------------------------

REPAY_ATTACK = """\
ICake_LP(Cake_LP).swap(10 ether, 0, address(this), hex"01");
uint256 bal = Iwbnb(wbnb).balanceOf(address(this));
Iwbnb(wbnb).withdraw(bal);
payable(tx.origin).transfer(address(this).balance);"""
REPAY_OTHERS = """\
function pancakeCall(address sender, uint256 amount0, uint256 amount1, bytes calldata data) external {
    Ivictim(victim).claim(50 ether);
    Iwbnb(wbnb).transfer(tx.origin, 1003 * 1e16);
}

receive() external payable {}"""
BUG, FIX = "transfer(tx.origin, 1003", "transfer(msg.sender, 1003"


def repay_provider(semantic):
    """Completion seeds BUG; ``semantic`` maps the source seen by each semantic round to its reply."""

    def answer(prompt):
        if prompt.startswith(COMPLETION):
            return sections(REPAY_ATTACK, REPAY_OTHERS)
        if prompt.startswith(SEMANTIC):
            return semantic(source_of(prompt))
        return source_of(prompt).replace("1003 * 1e16)\n", "1003 * 1e16);\n")

    return MockProvider(fallback=answer)


def repay_harness_factory(stream, analysis):
    """Runs the repaid-to-origin trace while BUG is present, the ground trace otherwise."""
    aliases = analysis.sketch.aliases
    good = run_result_from_stream(stream, analysis.oracle, aliases)
    bad = run_result_from_stream(parse_trace(fixtures.flash_swap("origin").native()), analysis.oracle, aliases)
    return StubHarness(lambda src: bad if BUG in src else good)


def flash_swap_raw():
    return fixtures.flash_swap().native().encode()


# -- one scenario per failure class -----------------------------------------------------------


def ticking_clock(step=250.0):
    """A clock that jumps ``step`` seconds on every reading."""
    counter = itertools.count()
    return lambda: next(counter) * step


def r1_timeout():
    """Static stages overrun the global timeout."""
    return run_pipeline(webkey_raw(), PipelineConfig(), provider=webkey_provider(), harness=replay_harness,
                        clock=ticking_clock())


def r2_syntax():
    """The completion leaves a missing semicolon that repair never fixes."""
    broken = sections(WHEEAAPPP_BODY + "\npayable(msg.sender).transfer(1)")
    provider = MockProvider(fallback=lambda p: broken if p.startswith(COMPLETION) else source_of(p))
    return run_pipeline(webkey_raw(), PipelineConfig(), provider=provider, harness=replay_harness)


def r3_context():
    """The PoC makes exactly the expected calls and still reverts: some state is missing."""

    def harness(stream, analysis):
        good = run_result_from_stream(stream, analysis.oracle, analysis.sketch.aliases)
        calls = list(good.calls)
        last = max(i for i, c in enumerate(calls) if not c.creates and c.name)
        calls[last] = dataclasses.replace(calls[last], status="reverted")
        flat = {k: (pre, pre) for k, (pre, _) in good.balances.items()}
        return StubHarness(lambda src: RunResult(False, flat, calls, "revert"))

    return run_pipeline(flash_swap_raw(), PipelineConfig(), provider=repay_provider(lambda src: src), harness=harness,
                        names=fixtures.flash_swap().names)


def r4_execution():
    """The fork cannot be created."""

    def harness(stream, analysis):
        return StubHarness(lambda src: RunResult(False, infra_error="Could not instantiate forked environment"))

    return run_pipeline(webkey_raw(), PipelineConfig(), provider=webkey_provider(), harness=harness)


def r5_semantic():
    """The provider never corrects the repayment target."""
    return run_pipeline(flash_swap_raw(), PipelineConfig(), provider=repay_provider(lambda src: src),
                        harness=repay_harness_factory, names=fixtures.flash_swap().names)


FAILURES = {"R1": r1_timeout, "R2": r2_syntax, "R3": r3_context, "R4": r4_execution, "R5": r5_semantic}


# -- adversarial refinement sessions ----------------------------------------------------------

GOOD = """contract A {
    function f() public {
        g();
    }

    function g() public {}
}
"""
BROKEN = GOOD.replace("g();", "g()")
ORACLE = OracleSpec("0x" + "aa" * 20, (AssetAssertion(NATIVE, 1, 5),), E18)
# completion, then every syntax round, then each semantic round with its auxiliary repairs
MAX_ROUNDS = 1 + 5 + 3 * (1 + 3)

REPLIES = ["garbage", "REFUSE: no", sections(), sections("x()"), GOOD, BROKEN, "```\n" + GOOD + "```"]
RUNS = [
    RunResult(False, {}, [CallSite(0, "0x1", "a", (), 0, "reverted")], "revert"),
    RunResult(True, {"native": (1, 1)}),
    RunResult(True, {"native": (1, 2)}),
    RunResult(False, {}, [], "revert"),
]


def tiny_sketch():
    meta = SketchMeta("ethereum", 10, ORACLE.beneficiary, "0x" + "a0" * 20, encode_call("attack()"))
    return build_sketch(None, [], ORACLE, meta, direct=False)


def adversarial_session(script, run_script, builds):
    """A session whose provider, compiler and runs cycle through the given scripts."""
    state = {"p": 0, "r": 0, "b": 0}

    def answer(prompt):
        state["p"] += 1
        return script[(state["p"] + len(prompt)) % len(script)]

    def execute(src):
        state["r"] += 1
        return run_script[state["r"] % len(run_script)]

    def check(src):
        state["b"] += 1
        return [] if builds[state["b"] % len(builds)] else ["Error: broken"]

    return refine(tiny_sketch(), "", MockProvider(fallback=answer), StubHarness(execute, check),
                  [CallSite(0, "0x1", "a")], ORACLE)


def budget_violations(s):
    """Reasons ``s`` broke the budgets or the status order; empty when it behaved."""
    out = []
    if s.provider_rounds() > MAX_ROUNDS:
        out.append(f"{s.provider_rounds()} provider rounds")
    if s.syntax_iterations_used > 5 or s.semantic_iterations_used > 3 or any(n > 3 for n in s.aux_syntax_used):
        out.append("iteration budget exceeded")
    ranks = [RANK[h] for h in s.history if h is not Status.FAILED]
    if ranks != sorted(ranks):
        out.append(f"status moved backwards: {s.history}")
    if Status.FAILED in s.history and (s.history[-1] is not Status.FAILED or Status.VERIFIABLE in s.history):
        out.append(f"inconsistent failure: {s.history}")
    return out
