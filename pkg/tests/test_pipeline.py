import json
import time

import pytest

from txlift import fixtures
from txlift.analysis import Stopwatch
from txlift.config import PipelineConfig, config_from_dict, load_config, load_token_names
from txlift.errors import PipelineTimeout
from txlift.pipeline import detect_format, read_manifest, replay_harness, run_batch, run_pipeline
from txlift.provider import MockProvider
from txlift.refine import Budgets

import scenarios
from scenarios import FIX, repay_harness_factory, repay_provider, flash_swap_raw, webkey_provider, webkey_raw

STATIC_STAGES = ["ingest", "cefg", "scope", "lift", "compress", "fundflow", "sketch"]


# -- configuration --------------------------------------------------------------------------


def test_defaults():
    cfg = PipelineConfig()
    assert (cfg.global_timeout, cfg.function_budget, cfg.window) == (600, 120, 8)
    assert (cfg.budgets.syntax, cfg.budgets.semantic, cfg.budgets.aux_syntax) == (5, 3, 3)


def test_config_invariants():
    with pytest.raises(ValueError):
        PipelineConfig(global_timeout=60, function_budget=120)
    with pytest.raises(ValueError):
        PipelineConfig(budgets=Budgets(syntax=-1))
    with pytest.raises(ValueError):
        config_from_dict({"provider": {"kind": "psychic"}})
    with pytest.raises(ValueError):
        config_from_dict({"no_such_key": 1})


def test_toml_round_trip(tmp_path):
    tokens = tmp_path / "tokens.txt"
    tokens.write_text("0x" + "AB" * 20 + " MyToken  # comment\n\n")
    path = tmp_path / "txlift.toml"
    path.write_text(f"""
global_timeout = 300
function_budget = 30
window = 4
token_db = "{tokens}"
stables = ["0x{'cd' * 20}"]

[budgets]
syntax = 2

[provider]
kind = "chat"
endpoint = "http://localhost:1/v1/chat/completions"
model = "m"

[harness]
kind = "stub"

[rpc]
url = "http://localhost:8545"
chain = "bsc"
""")
    cfg = load_config(path)
    assert (cfg.global_timeout, cfg.function_budget, cfg.window) == (300, 30, 4)
    assert cfg.budgets == Budgets(2, 3, 3)
    assert cfg.provider.kind == "chat" and cfg.harness.kind == "stub"
    assert cfg.rpc.chain == "bsc" and cfg.rpc.retries == 3
    assert cfg.token_names() == {"0x" + "ab" * 20: "MyToken"}
    assert cfg.priority("bsc").tier("0x" + "cd" * 20) == 2
    assert load_token_names(tokens) == cfg.token_names()
    assert load_config(None) == PipelineConfig()


# -- stopwatch ------------------------------------------------------------------------------


def test_stopwatch_deadline():
    t = iter([0, 1, 2, 3, 4, 50, 51])
    w = Stopwatch(10, lambda: next(t))
    with w.stage("a"):
        pass
    assert w.timings == {"a": 1}
    with pytest.raises(PipelineTimeout):
        with w.stage("b"):
            pass
    assert w.budget(120) == 0.0


# -- end to end -------------------------------------------------------------------------------


def test_webkey_is_verifiable(tmp_path):
    start = time.monotonic()
    r = run_pipeline(webkey_raw(), PipelineConfig(), provider=webkey_provider(), harness=replay_harness,
                     out_dir=tmp_path)
    wall = time.monotonic() - start
    assert r.status == "Verifiable", r.detail
    assert wall < 30
    assert set(STATIC_STAGES) <= set(r.timings) and "refine" in r.timings
    assert sum(r.timings.values()) <= r.total_seconds + 1e-6
    assert r.total_seconds <= wall
    assert r.tokens["requests"] == 1 and r.tokens["prompt_tokens"] > 0
    assert r.oracle == [{"asset": "USDT", "sign": 1, "magnitude": str(737 * 10**18)}]
    d = tmp_path / "bsc" / r.tx_hash
    names = {"trace.jsonl", "cefg.json", "pseudocode.txt", "sketch.sol", "poc.sol", "report.json", "transcript.json"}
    assert {p.name for p in d.iterdir()} == names
    assert json.loads((d / "report.json").read_text())["status"] == "Verifiable"
    assert "_BASE_TOKEN_()" in (d / "poc.sol").read_text()


def test_no_harness_is_readable():
    r = run_pipeline(webkey_raw(), PipelineConfig(), provider=webkey_provider())
    assert r.status == "Readable" and r.failure is None


def test_geth_input_gives_the_same_sketch(tmp_path):
    a = run_pipeline(webkey_raw(), PipelineConfig(), provider=webkey_provider(), out_dir=tmp_path / "a")
    geth = fixtures.webkey(capture_memory=True).geth().encode()
    b = run_pipeline(geth, PipelineConfig(), provider=webkey_provider(), out_dir=tmp_path / "b")
    assert a.status == b.status == "Readable"
    sa, sb = (json.loads(open(x.artifacts["report.json"]).read()) for x in (a, b))
    assert sa["oracle"] == sb["oracle"]
    assert open(a.artifacts["sketch.sol"]).read() == open(b.artifacts["sketch.sol"]).read()


def test_wrong_repayment_is_fixed_through_the_pipeline():
    r = run_pipeline(flash_swap_raw(), PipelineConfig(), provider=repay_provider(lambda s: s.replace(scenarios.BUG, FIX)),
                     harness=repay_harness_factory, names=fixtures.flash_swap().names)
    assert r.status == "Verifiable" and r.semantic_iterations_used == 1


@pytest.mark.parametrize("code", sorted(scenarios.FAILURES))
def test_failure_taxonomy(code):
    r = scenarios.FAILURES[code]()
    assert r.status == f"Failed({code})", r.detail
    assert r.failure == code


def test_timeout_is_enforced_between_static_stages():
    r = scenarios.r1_timeout()
    assert "refine" not in r.timings and r.tokens["requests"] == 0


def test_unreadable_input_is_reported():
    r = run_pipeline(b'{"kind": "step", "pc": "x"}\n', PipelineConfig(), provider=MockProvider())
    assert r.status == "Failed(R3)"


def test_detect_format():
    assert detect_format(webkey_raw()) == "native"
    assert detect_format(fixtures.webkey(capture_memory=True).geth()) == "geth"
    assert detect_format('{\n "structLogs": []\n}') == "geth"


def test_batch(tmp_path):
    (tmp_path / "a.jsonl").write_bytes(webkey_raw())
    (tmp_path / "b.jsonl").write_bytes(flash_swap_raw())
    manifest = tmp_path / "manifest.txt"
    manifest.write_text("# incidents\na.jsonl\nb.jsonl\nmissing.jsonl\n")
    sources = read_manifest(manifest)
    assert sources[0] == str(tmp_path / "a.jsonl")
    reports = run_batch(sources, PipelineConfig(workers=3), out_dir=tmp_path / "out",
                        provider=MockProvider(fallback=lambda p: scenarios.sections()))
    assert [r.status for r in reports] == ["Readable", "Readable", "Failed(R3)"]
    assert (tmp_path / "out" / "bsc" / reports[0].tx_hash / "report.json").exists()
    assert reports[0].tx_hash != reports[1].tx_hash
