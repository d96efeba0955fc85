"""End-to-end incident processing: trace in, PoC and report out."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

from .analysis import Analysis, Stopwatch, analyze
from .config import PipelineConfig
from .errors import (
    LiftTimeout,
    MalformedTrace,
    MissingMeta,
    PipelineTimeout,
    RpcUnavailable,
    TraceUnsupported,
    TxLiftError,
    TxNotFound,
    UnboundValue,
)
from .harness import ForgeHarness, Harness, StubHarness, run_result_from_stream, sites_from_stream
from .ingest import TraceStream, parse_trace
from .provider import ChatProvider, CompletionProvider, MockProvider, Usage
from .refine import Failure, RefinementSession, Status, refine
from .rpc import fetch_trace

log = logging.getLogger(__name__)


@dataclass
class IncidentReport:
    tx_hash: str
    chain: str
    status: str  # Readable | Runnable | Verifiable | Failed(R1..R5)
    failure: str | None = None
    detail: str = ""
    timings: dict[str, float] = field(default_factory=dict)
    total_seconds: float = 0.0
    tokens: dict[str, int] = field(default_factory=dict)
    syntax_iterations_used: int = 0
    semantic_iterations_used: int = 0
    beneficiary: str | None = None
    oracle: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    artifacts: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def detect_format(raw: bytes | str) -> str:
    """``native`` when the first record carries a ``kind`` field, otherwise ``geth``."""
    text = raw.decode(errors="replace") if isinstance(raw, bytes) else raw
    first = next((ln for ln in text.splitlines() if ln.strip()), "")
    try:
        obj = json.loads(first)
    except json.JSONDecodeError:
        return "geth"  # a pretty-printed JSON document spans lines
    return "native" if isinstance(obj, dict) and "kind" in obj else "geth"


def load_raw(source: str | Path, cfg: PipelineConfig) -> bytes:
    """Trace bytes from a file, or from the configured node when ``source`` is a hash."""
    path = Path(source)
    if path.exists():
        return path.read_bytes()
    text = str(source)
    if text.startswith("0x") and len(text) == 66:
        if cfg.rpc is None:
            raise MalformedTrace(f"{text} looks like a transaction hash but no rpc endpoint is configured")
        return fetch_trace(text, cfg.rpc, cfg.cache_dir)
    raise MalformedTrace(f"no such trace file: {source}")


def make_provider(cfg: PipelineConfig) -> CompletionProvider:
    p = cfg.provider
    if p.kind == "chat":
        return ChatProvider(p.endpoint, p.model, p.key_env, dict(p.params), p.timeout)
    return MockProvider.from_dir(p.mock_dir) if p.mock_dir else MockProvider()


def replay_harness(stream: TraceStream, analysis: Analysis) -> StubHarness:
    """Offline stand-in: builds with the structural checker and runs by replaying ``stream``."""
    result = run_result_from_stream(stream, analysis.oracle, analysis.sketch.aliases)
    return StubHarness(lambda source: result)


HarnessFactory = Callable[[TraceStream, Analysis], Harness | None]


def make_harness(cfg: PipelineConfig) -> HarnessFactory:
    h = cfg.harness
    if h.kind == "forge":
        if not h.project:
            raise ValueError("the forge harness needs harness.project")
        forge = ForgeHarness(Path(h.project), h.forge, timeout=h.timeout)
        return lambda stream, analysis: forge
    if h.kind == "stub":
        return replay_harness
    return lambda stream, analysis: None


def _usage(provider: CompletionProvider) -> dict[str, int]:
    u = getattr(provider, "usage", None) or Usage()
    return {"requests": u.requests, "prompt_tokens": u.prompt_tokens, "completion_tokens": u.completion_tokens}


def _oracle_rows(analysis: Analysis) -> list[dict]:
    return [{"asset": analysis.sketch.aliases.get(a.asset, a.asset), "sign": a.sign, "magnitude": str(a.magnitude)}
            for a in analysis.oracle.assets]


def incident_dir(out_dir: str | Path, chain: str, tx_hash: str) -> Path:
    return Path(out_dir) / chain / tx_hash


def run_pipeline(
    source: str | Path | bytes,
    cfg: PipelineConfig | None = None,
    *,
    provider: CompletionProvider | None = None,
    harness: HarnessFactory | None = None,
    names: dict[str, str] | None = None,
    out_dir: str | Path | None = None,
    clock: Callable[[], float] = time.monotonic,
) -> IncidentReport:
    """Process one incident.

    ``source`` is a trace file, raw trace bytes, or a transaction hash. Stage
    errors end in a ``Failed(R#)`` report instead of raising; artifacts go to
    ``<out_dir>/<chain>/<tx_hash>/`` when ``out_dir`` is set.
    """
    cfg = cfg or PipelineConfig()
    provider = provider if provider is not None else make_provider(cfg)
    harness = harness if harness is not None else make_harness(cfg)
    watch = Stopwatch(cfg.global_timeout, clock)
    selectors = cfg.selectors()
    report = IncidentReport("", "", Status.READABLE.value)
    artifacts: dict[str, str | bytes] = {}

    def finish(session: RefinementSession | None = None) -> IncidentReport:
        report.timings = dict(watch.timings)
        report.total_seconds = watch.elapsed()
        report.tokens = _usage(provider)
        if session is not None:
            report.status = session.label
            report.failure = session.failure.name if session.failure else None
            report.detail = session.detail
            report.syntax_iterations_used = session.syntax_iterations_used
            report.semantic_iterations_used = session.semantic_iterations_used
            if session.poc_source != artifacts.get("sketch.sol"):
                artifacts["poc.sol"] = session.poc_source
            artifacts["transcript.json"] = session.to_json()
        if out_dir is not None and report.tx_hash:
            report.artifacts = _write_artifacts(incident_dir(out_dir, report.chain, report.tx_hash), artifacts,
                                                report)
        return report

    def fail(failure: Failure, detail: str) -> IncidentReport:
        report.status, report.failure, report.detail = f"Failed({failure.name})", failure.name, detail
        return finish()

    try:
        with watch.stage("ingest"):
            raw = source if isinstance(source, bytes) else load_raw(source, cfg)
            stream = parse_trace(raw, detect_format(raw))
        report.tx_hash, report.chain = stream.tx_hash, stream.chain
        artifacts["trace." + ("jsonl" if detect_format(raw) == "native" else "json")] = raw
        analysis = analyze(
            stream,
            minimal=cfg.minimal,
            compressed=cfg.compressed,
            priority=cfg.priority(stream.chain),
            funding_floor=cfg.funding_floor,
            direct=cfg.direct,
            names={**cfg.token_names(), **(names or {})},
            selectors=selectors,
            budget=cfg.function_budget,
            watch=watch,
        )
    except (PipelineTimeout, LiftTimeout) as e:
        return fail(Failure.R1, str(e))
    except RpcUnavailable as e:
        return fail(Failure.R4, f"{type(e).__name__}: {e}")
    except (MalformedTrace, MissingMeta, UnboundValue, TxNotFound, TraceUnsupported) as e:
        # the trace does not carry what the later stages need
        return fail(Failure.R3, f"{type(e).__name__}: {e}")

    report.beneficiary = analysis.beneficiary
    report.oracle = _oracle_rows(analysis)
    report.notes = list(analysis.notes)
    artifacts["cefg.json"] = analysis.cefg.dumps()
    artifacts["pseudocode.txt"] = analysis.pseudocode
    artifacts["sketch.sol"] = analysis.sketch.source_text

    t0 = clock()
    try:
        session = refine(
            analysis.sketch,
            analysis.pseudocode,
            provider,
            harness(stream, analysis),
            sites_from_stream(stream, selectors),
            analysis.oracle,
            budgets=cfg.budgets,
            window=cfg.window,
        )
    except TxLiftError as e:
        watch.timings["refine"] = clock() - t0
        return fail(Failure.R5, f"{type(e).__name__}: {e}")
    watch.timings["refine"] = clock() - t0
    return finish(session)


def _write_artifacts(directory: Path, artifacts: dict[str, str | bytes], report: IncidentReport) -> dict[str, str]:
    directory.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, content in artifacts.items():
        path = directory / name
        if isinstance(content, bytes):
            path.write_bytes(content)
        else:
            path.write_text(content)
        written[name] = str(path)
    written["report.json"] = str(directory / "report.json")
    report.artifacts = written
    (directory / "report.json").write_text(report.to_json())
    return written


def read_manifest(path: str | Path) -> list[str]:
    """One trace path or transaction hash per line; relative paths resolve against the manifest."""
    base = Path(path).parent
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("0x") and len(line) == 66:
            out.append(line)
        else:
            p = Path(line)
            out.append(str(p if p.is_absolute() else base / p))
    return out


def run_batch(sources: list[str], cfg: PipelineConfig, *, out_dir: str | Path | None = None,
              provider: CompletionProvider | None = None,
              harness: HarnessFactory | None = None) -> list[IncidentReport]:
    """Process incidents concurrently, at most ``cfg.workers`` at a time, in input order."""
    out_dir = cfg.out_dir if out_dir is None else out_dir

    def one(src: str) -> IncidentReport:
        try:
            return run_pipeline(src, cfg, provider=provider, harness=harness, out_dir=out_dir)
        except Exception as e:  # one bad incident must not stop the batch
            log.exception("incident %s failed", src)
            return IncidentReport(str(src), "", "Failed(R4)", "R4", f"{type(e).__name__}: {e}")

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(one, sources))
