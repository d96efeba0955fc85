"""Command-line interface."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .analysis import Analysis, analyze
from .config import HarnessConfig, PipelineConfig, ProviderConfig, load_config
from .errors import TxLiftError
from .fundflow import delta_table
from .harness import sites_from_stream
from .ingest import TraceStream, parse_trace
from .pipeline import detect_format, load_raw, make_harness, make_provider, read_manifest, run_batch, run_pipeline
from .refine import complete_sketch, validate_profit
from .rpc import EndpointConfig, fetch_trace

log = logging.getLogger("txlift")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "direct_call", False):
        changes["direct"] = True
    if getattr(args, "full", False):
        changes["minimal"] = False
    if getattr(args, "no_compress", False):
        changes["compressed"] = False
    if getattr(args, "timeout", None) is not None:
        changes["global_timeout"] = args.timeout
        changes["function_budget"] = min(cfg.function_budget, args.timeout)
    if getattr(args, "mock_dir", None):
        changes["provider"] = ProviderConfig("mock", mock_dir=args.mock_dir)
    if getattr(args, "harness", None):
        changes["harness"] = HarnessConfig(args.harness, args.project or cfg.harness.project, cfg.harness.forge,
                                           cfg.harness.timeout)
    if getattr(args, "no_harness", False):
        changes["harness"] = HarnessConfig("none")
    if getattr(args, "workers", None):
        changes["workers"] = args.workers
    if getattr(args, "rpc", None):
        changes["rpc"] = EndpointConfig(args.rpc, args.chain)
    return cfg.with_(**changes) if changes else cfg


def _stream(args, cfg: PipelineConfig) -> TraceStream:
    raw = load_raw(args.trace, cfg)
    fmt = detect_format(raw) if args.format == "auto" else args.format
    return parse_trace(raw, fmt)


def _analysis(args, cfg: PipelineConfig) -> Analysis:
    stream = _stream(args, cfg)
    return analyze(stream, minimal=cfg.minimal, compressed=cfg.compressed, priority=cfg.priority(stream.chain),
                   funding_floor=cfg.funding_floor, direct=cfg.direct, names=cfg.token_names(),
                   selectors=cfg.selectors(), budget=cfg.function_budget)


# -- subcommands ---------------------------------------------------------------------------


def cmd_fetch(args) -> int:
    cfg = EndpointConfig(args.rpc, args.chain, timeout=args.rpc_timeout, retries=args.retries)
    raw = fetch_trace(args.tx, cfg, args.cache)
    if args.out:
        Path(args.out).write_bytes(raw)
    else:
        sys.stdout.write(raw.decode() + "\n")
    return 0


def cmd_ingest(args) -> int:
    s = _stream(args, _config(args))
    summary = {
        "tx_hash": s.tx_hash, "chain": s.chain, "block": s.block_number, "sender": s.sender,
        "to": s.initial_recipient, "steps": len(s.steps), "frames": len(s.frames), "logs": len(s.logs),
        "value_transfers": len(s.value_transfers),
        "reverted_frames": sum(1 for f in s.frames if f.status != "ok"),
    }
    _emit(json.dumps(summary, indent=2), args.out)
    return 0


def cmd_cefg(args) -> int:
    from .cefg import build_cefg

    _emit(build_cefg(_stream(args, _config(args))).dumps(), args.out)
    return 0


def cmd_scope(args) -> int:
    a = _analysis(args, _config(args).with_(direct=False))
    rows = [{"address": f.address, "selector": f.selector, "provenance": f.provenance.value} for f in a.functions]
    _emit(json.dumps({"contracts": sorted(a.scope.contracts) if a.scope else [], "functions": rows,
                      "notes": a.notes}, indent=2), args.out)
    return 0


def cmd_lift(args) -> int:
    _emit(_analysis(args, _config(args).with_(direct=False)).pseudocode, args.out)
    return 0


def cmd_fundflow(args) -> int:
    a = _analysis(args, _config(args))
    oracle = [{"asset": x.asset, "sign": x.sign, "magnitude": str(x.magnitude)} for x in a.oracle.assets]
    _emit(json.dumps({"deltas": delta_table(a.deltas), "beneficiary": a.beneficiary, "oracle": oracle,
                      "min_funding": str(a.oracle.min_funding), "skipped_logs": a.skipped_logs}, indent=2),
          args.out)
    return 0


def cmd_sketch(args) -> int:
    _emit(_analysis(args, _config(args)).sketch.source_text, args.out)
    return 0


def cmd_synth(args) -> int:
    cfg = _config(args)
    a = _analysis(args, cfg)
    _emit(complete_sketch(a.sketch, a.pseudocode, make_provider(cfg)), args.out)
    return 0


def cmd_validate(args) -> int:
    cfg = _config(args)
    a = _analysis(args, cfg)
    harness = make_harness(cfg)(a.stream, a)
    if harness is None:
        log.error("validate needs a harness (--harness forge or stub)")
        return 2
    source = Path(args.poc).read_text()
    built = harness.build(source)
    if not built.ok:
        print("BUILD FAILED")
        print("\n".join(built.diagnostics))
        return 1
    run = harness.run(source)
    ok = validate_profit(run, a.oracle, a.sketch.aliases)
    for label, (pre, post) in sorted(run.balances.items()):
        print(f"{label}: {pre} -> {post}")
    print("PASS" if ok else f"FAIL {run.error or 'profit oracle not satisfied'}")
    if not ok and run.calls:
        log.info("observed %d calls, ground %d", len(run.calls), len(sites_from_stream(a.stream)))
    return 0 if ok else 1


def cmd_run(args) -> int:
    cfg = _config(args)
    report = run_pipeline(args.trace, cfg, out_dir=args.out or cfg.out_dir)
    print(report.to_json())
    return 1 if report.status.startswith("Failed") else 0


def cmd_batch(args) -> int:
    cfg = _config(args)
    reports = run_batch(read_manifest(args.manifest), cfg, out_dir=args.out or cfg.out_dir)
    for r in reports:
        print(f"{r.chain or '-'}\t{r.tx_hash}\t{r.status}\t{r.detail[:120]}")
    counts: dict[str, int] = {}
    for r in reports:
        counts[r.status] = counts.get(r.status, 0) + 1
    print(json.dumps(counts, sort_keys=True))
    return 0


# -- parser ----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="txlift", description="Turn an exploit transaction trace into a Foundry PoC.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, fn, help, trace=True):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(fn=fn)
        sp.add_argument("--config", help="TOML configuration file")
        sp.add_argument("-o", "--out", help="output file (directory for run and batch)")
        if trace:
            sp.add_argument("trace", help="trace file, or a transaction hash when an rpc endpoint is set")
            sp.add_argument("--format", choices=["auto", "native", "geth"], default="auto")
            sp.add_argument("--rpc", help="node endpoint used when TRACE is a hash")
            sp.add_argument("--chain", default="ethereum")
        return sp

    f = command("fetch", cmd_fetch, "download a trace over JSON-RPC", trace=False)
    f.add_argument("--tx", required=True)
    f.add_argument("--rpc", required=True)
    f.add_argument("--chain", default="ethereum")
    f.add_argument("--cache", help="cache directory")
    f.add_argument("--rpc-timeout", type=float, default=60.0)
    f.add_argument("--retries", type=int, default=3)

    command("ingest", cmd_ingest, "parse a trace and print a summary")
    command("cefg", cmd_cefg, "print the execution flow graph as JSON")
    command("scope", cmd_scope, "list the functions in the attack scope")
    lift = command("lift", cmd_lift, "print pseudocode for the attack scope")
    lift.add_argument("--full", action="store_true", help="keep intermediate assignments")
    lift.add_argument("--no-compress", action="store_true", help="do not summarize loops")
    command("fundflow", cmd_fundflow, "print balance changes and the profit oracle")
    sk = command("sketch", cmd_sketch, "print the PoC sketch")
    sk.add_argument("--direct-call", action="store_true", help="call the victim directly from the test")
    sy = command("synth", cmd_synth, "complete the sketch with the configured provider")
    sy.add_argument("--direct-call", action="store_true")
    sy.add_argument("--mock-dir", help="scripted responses named <sha256 of prompt>.txt")
    va = command("validate", cmd_validate, "build and run a PoC and check the profit oracle")
    va.add_argument("--poc", required=True)
    va.add_argument("--harness", choices=["forge", "stub"], default="forge")
    va.add_argument("--project", help="Foundry project directory")

    for name, fn, help in (("run", cmd_run, "run the whole pipeline on one trace"),
                           ("batch", cmd_batch, "run the pipeline on every entry of a manifest")):
        sp = command(name, fn, help, trace=name == "run")
        if name == "batch":
            sp.add_argument("manifest", help="one trace path or transaction hash per line")
            sp.add_argument("--workers", type=int)
            sp.add_argument("--rpc")
            sp.add_argument("--chain", default="ethereum")
        sp.add_argument("--no-harness", action="store_true", help="stop after completion")
        sp.add_argument("--harness", choices=["none", "forge", "stub"])
        sp.add_argument("--project", help="Foundry project directory")
        sp.add_argument("--direct-call", action="store_true")
        sp.add_argument("--mock-dir", help="scripted responses named <sha256 of prompt>.txt")
        sp.add_argument("--timeout", type=float, help="global timeout for the static stages, in seconds")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (TxLiftError, ValueError, OSError) as e:
        log.error("%s: %s", type(e).__name__, e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
