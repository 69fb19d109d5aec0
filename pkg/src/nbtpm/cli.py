"""Command-line entry point: ``nbtpm <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path

import numpy as np

from .analysis import (
    ValidationError,
    estimate_weight_entropy,
    weight_histogram,
    write_entropy_csv,
    write_histogram_csv,
)
from .attacker import AttackSession, eavesdrop_session
from .experiments import ExperimentPlan, GridCellReport, export_report, run_batch, run_seeds
from .protocol import InputMode, SessionConfig, run_key_agreement, transcript_to_jsonl
from .tpm import LearningRule, TpmParams
from .transport import JsonlCapture, TransportError, connect, make_server

log = logging.getLogger("nbtpm")

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_TRANSPORT = 4


def _common(p: argparse.ArgumentParser, *, grid: bool = False) -> None:
    p.add_argument("--k", type=int, default=3, help="hidden units (default 3)")
    if grid:
        p.add_argument("--n", type=int, nargs="+", default=None, help="inputs per unit (default 40 50 60)")
        p.add_argument("--m", type=int, nargs="+", default=None, help="input bounds (default 1..5)")
    else:
        p.add_argument("--n", type=int, default=40, help="inputs per unit (default 40)")
        p.add_argument("--m", type=int, default=1, help="input bound M (default 1)")
    p.add_argument("--l", type=int, default=5, help="weight bound L (default 5)")
    p.add_argument("--rule", default="hebbian", help="hebbian, anti-hebbian or random-walk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out", type=Path, default=None)


def _session_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input-mode", choices=["explicit", "seed"], default="explicit")
    p.add_argument("--probe-interval", type=int, default=10)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nbtpm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one key agreement and print its summary")
    _common(p)
    p.add_argument("--attack", action="store_true", help="attach a passive eavesdropper")
    p.add_argument("--transcript", type=Path, help="write the JSON-lines transcript here")

    for name, text in [("sweep", "Monte-Carlo sweep over the (M, N) grid"), ("attack", "sweep with an eavesdropper")]:
        p = sub.add_parser(name, help=text)
        _common(p, grid=True)
        p.add_argument("--runs", type=int, default=1000, help="runs per grid cell")
        p.add_argument("--plan", type=Path, help="JSON plan file; its fields override the flags")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--save-ensembles", type=Path, help="directory for per-cell final-weight .npy files")
        if name == "sweep":
            p.add_argument("--attack", action="store_true")

    p = sub.add_parser("analyze", help="entropy and key length of a saved weight ensemble")
    p.add_argument("ensemble", type=Path, help=".npy array of shape (runs, K, N)")
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--estimator", choices=["per_position", "pooled"], default="per_position")
    p.add_argument("--format", choices=["csv", "json"], default="json")
    p.add_argument("--out", type=Path, default=None, help="per-position entropy output")
    p.add_argument("--histogram", type=Path, default=None, help="per-position value counts (CSV)")

    p = sub.add_parser("serve", help="listen for peers and run the responder side")
    _common(p)
    _session_args(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7878)
    p.add_argument("--once", action="store_true", help="exit after the first session")
    p.add_argument("--capture", type=Path, help="mirror all frames to a JSON-lines file")

    p = sub.add_parser("connect", help="connect to a peer and run the initiator side")
    _common(p)
    _session_args(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7878)
    p.add_argument("--capture", type=Path, help="mirror all frames to a JSON-lines file")
    return parser


def _session_config(args) -> SessionConfig:
    seeds, _ = run_seeds(args.seed)
    kwargs = {}
    if hasattr(args, "input_mode"):
        kwargs["input_mode"] = InputMode.SEED_DERIVED if args.input_mode == "seed" else InputMode.EXPLICIT_VECTORS
        kwargs["sync_probe_interval"] = args.probe_interval
    return SessionConfig(
        TpmParams(args.k, args.n, args.l, args.m),
        LearningRule.parse(args.rule),
        args.max_iter,
        seeds=seeds,
        **kwargs,
    )


def _summary(transcript) -> dict:
    return {
        "sync_time": transcript.sync_time,
        "converged": transcript.converged,
        "matched_rounds": sum(r.matched for r in transcript.records),
        "key_digest": transcript.key_digest(),
    }


def _emit(obj, out: Path | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out is None:
        print(text)
    else:
        out.write_text(text + "\n")


def cmd_simulate(args) -> int:
    config = _session_config(args)
    extra = []
    if args.attack:
        _, attacker_seed = run_seeds(args.seed)
        attack = AttackSession(config, attacker_seed)
        result = eavesdrop_session(attack)
        transcript = result.transcript
        extra.append(result.summary(attack))
    else:
        transcript = run_key_agreement(config)
    if args.transcript:
        args.transcript.write_text(transcript_to_jsonl(transcript, extra))
    summary = _summary(transcript)
    if extra:
        summary["attack_score"] = extra[0]["score"]
    _emit(summary, args.out)
    return 0


def _plan(args, attack: bool) -> ExperimentPlan:
    fields = {
        "k": args.k,
        "l": args.l,
        "runs_per_cell": args.runs,
        "rule": args.rule,
        "base_seed": args.seed,
        "max_iterations": args.max_iter,
        "attack_enabled": attack,
    }
    if args.n:
        fields["n_values"] = args.n
    if args.m:
        fields["m_values"] = args.m
    plan = ExperimentPlan(**fields)
    if args.plan:
        with open(args.plan) as fh:
            overrides = json.load(fh)
        plan = ExperimentPlan.from_dict({**plan.to_dict(), **overrides})
    return plan


def _print_table(reports: list[GridCellReport]) -> None:
    head = f"{'M':>2} {'N':>3} {'median':>7} {'mean':>8} {'sd':>7} {'entropy':>8} {'keylen':>6} {'att.med':>7} {'att.sd':>7}"
    print(head, file=sys.stderr)
    for r in sorted(reports, key=lambda r: (r.n, r.m)):
        s, e, a = r.sync_time, r.entropy_report, r.attack_score
        line = (
            f"{r.m:>2} {r.n:>3} "
            + (f"{s.median:>7.1f} {s.average:>8.1f} {s.std_dev:>7.1f} " if s else f"{'-':>7} {'-':>8} {'-':>7} ")
            + (f"{e.average_entropy:>8.4f} {e.effective_key_length:>6d} " if e else f"{'-':>8} {'-':>6} ")
            + (f"{a.median:>7.3f} {a.std_dev:>7.3f}" if a else "")
        )
        print(line, file=sys.stderr)


def cmd_sweep(args, attack: bool) -> int:
    plan = _plan(args, attack)
    total = len(plan.cells())

    def progress(m, n, done):
        print(f"[{done}/{total}] M={m} N={n} done", file=sys.stderr, flush=True)

    reports = run_batch(plan, n_jobs=args.jobs, progress=progress)
    out = args.out or Path(f"sweep.{args.format}")
    export_report(reports, args.format, out)
    if args.save_ensembles:
        args.save_ensembles.mkdir(parents=True, exist_ok=True)
        for r in reports:
            if r.ensemble:
                np.save(args.save_ensembles / f"ensemble_m{r.m}_n{r.n}.npy", np.stack(r.ensemble))
    _print_table(reports)
    print(f"wrote {out}", file=sys.stderr)
    return 0


def cmd_analyze(args) -> int:
    ensemble = np.load(args.ensemble)
    if ensemble.ndim != 3:
        raise ValidationError(f"expected a (runs, K, N) array, got shape {ensemble.shape}")
    hist = weight_histogram(list(ensemble), args.l)
    report = estimate_weight_entropy(hist, args.estimator)
    k, n = hist.shape
    summary = {
        "runs": hist.ensemble_size,
        "k": k,
        "n": n,
        "l": args.l,
        "estimator": report.estimator,
        "average_entropy": report.average_entropy,
        "effective_key_length": report.effective_key_length,
    }
    if args.out is not None:
        if args.format == "csv":
            write_entropy_csv(report, args.out)
        else:
            summary["per_position_entropy"] = report.per_position_entropy.tolist()
            args.out.write_text(json.dumps(summary, indent=2) + "\n")
    if args.histogram is not None:
        write_histogram_csv(hist, args.histogram)
    print(json.dumps({k: v for k, v in summary.items() if k != "per_position_entropy"}, indent=2))
    return 0


def _capture_taps(path: Path | None):
    if path is None:
        return [], None
    fh = open(path, "w")
    return [JsonlCapture(fh)], fh


def cmd_serve(args) -> int:
    config = _session_config(args)
    taps, fh = _capture_taps(args.capture)
    finished = threading.Event()
    failures = []

    def on_result(address, result):
        if isinstance(result, Exception):
            failures.append(result)
            print(json.dumps({"peer": list(address), "error": str(result)}), flush=True)
        else:
            print(json.dumps({"peer": list(address), **_summary(result)}), flush=True)
        finished.set()

    server = make_server(args.host, args.port, config, on_result, taps)
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
    try:
        if args.once:
            server.handle_request()
            finished.wait()
        else:
            server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        if fh:
            fh.close()
    if args.once and failures:
        return EXIT_TRANSPORT
    return 0


def cmd_connect(args) -> int:
    config = _session_config(args)
    taps, fh = _capture_taps(args.capture)
    try:
        transcript = connect(args.host, args.port, config, taps)
    finally:
        if fh:
            fh.close()
    _emit(_summary(transcript), args.out)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    handlers = {
        "simulate": cmd_simulate,
        "sweep": lambda a: cmd_sweep(a, attack=a.attack),
        "attack": lambda a: cmd_sweep(a, attack=True),
        "analyze": cmd_analyze,
        "serve": cmd_serve,
        "connect": cmd_connect,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, TypeError, KeyError) as exc:
        print(f"nbtpm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TransportError, ConnectionError) as exc:
        print(f"nbtpm: transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except OSError as exc:
        print(f"nbtpm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
