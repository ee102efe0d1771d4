"""Command-line entry point.

Subcommands: record one process, synthesize a dataset, train a model,
run an experiment, or watch the busiest processes live.  Data goes to
stdout, logs go to stderr.  Exit codes: 0 ok, 2 bad flags, 3 counter
access denied, 4 target process gone, 5 training failure, 6 model/host
mismatch under --strict.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import learn, sampler, synth
from .bundle import BundleError, ModelBundle, train_bundle
from .experiments import ExperimentSpec, run_experiment
from .samples import DatasetError, load_dataset, save_dataset, save_sample

log = logging.getLogger("minerwatch")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_COUNTERS_DENIED = 3
EXIT_PID_GONE = 4
EXIT_TRAINING = 5
EXIT_STRICT_MISMATCH = 6


def _read_config_file(path: str) -> dict[str, str]:
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line without '=': {line!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minerwatch")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", default=os.environ.get("MINERWATCH_OUT_DIR", "."))
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--log-level", default="info",
                        choices=["debug", "info", "warning", "error"])
    parser.add_argument("--config", help="key=value file mirroring the flags; flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("record", help="record one process into a sample CSV")
    p.add_argument("--pid", type=int, required=True)
    p.add_argument("--duration", type=float, default=30.0)
    p.add_argument("--rate", type=float, default=10.0)
    p.add_argument("--warmup", type=float, default=0.0)
    p.add_argument("--label", help="task/subclass, e.g. mining/btc")
    p.add_argument("--out", help="output CSV path (default per --out-dir)")

    p = sub.add_parser("synth", help="write a synthetic labeled dataset")
    p.add_argument("--preset", choices=["paper", "small"], default="paper")
    p.add_argument("--divergence", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.add_argument("--programs-for", help="subclass that gets program variants")
    p.add_argument("--n-programs", type=int, default=1)

    p = sub.add_parser("train", help="train a model bundle on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target", choices=["binary", "currency"], default="binary")
    p.add_argument("--classifier", choices=["rf", "svm"], default="rf")
    p.add_argument("--grid", choices=["fast", "full"], default="fast")
    p.add_argument("--selection", choices=["all", "mean"], default="all")
    p.add_argument("--cumulative-to-delta", action="store_true",
                   help="difference cumulative counter files while loading")
    p.add_argument("--out", required=True)

    p = sub.add_parser("experiment", help="run one of the six experiments")
    p.add_argument("--kind", required=True,
                   choices=["binary", "currency", "nested", "sample-length",
                            "feature-relevance", "unseen-miner"])
    p.add_argument("--dataset", required=True)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--classifier", choices=["rf", "svm"], default="rf")
    p.add_argument("--grid", choices=["fast", "full"], default="fast")
    p.add_argument("--lengths", help="comma list of seconds for sample-length")
    p.add_argument("--psi", help="comma list of percentages for feature-relevance")
    p.add_argument("--program-subclass", help="subclass with program variants")
    p.add_argument("--cumulative-to-delta", action="store_true",
                   help="difference cumulative counter files while loading")

    p = sub.add_parser("watch", help="classify the busiest processes live")
    p.add_argument("--model", required=True)
    p.add_argument("--top-n", type=int, default=5)
    p.add_argument("--window", type=float, default=5.0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--interval", type=float, default=10.0)
    p.add_argument("--iterations", type=int, default=0, help="0 = run until interrupted")
    p.add_argument("--strict", action="store_true")
    return parser


def parse_args(argv: list[str] | None) -> argparse.Namespace:
    parser = build_parser()
    # peek at --config so the file can provide defaults that flags override
    probe, _ = parser.parse_known_args(argv)
    if probe.config:
        parser.set_defaults(**_read_config_file(probe.config))
    return parser.parse_args(argv)


def cmd_record(args: argparse.Namespace) -> int:
    config = sampler.SamplerConfig(
        pid=args.pid, rate_hz=args.rate, duration_s=args.duration, warmup_s=args.warmup,
    )
    try:
        sample = sampler.record(config)
    except sampler.CounterAccessError as exc:
        log.error("%s", exc)
        return EXIT_COUNTERS_DENIED
    except sampler.ProcessVanishedError as exc:
        log.error("%s", exc)
        return EXIT_PID_GONE

    if args.out:
        out = Path(args.out)
    elif args.label:
        task, _, subclass = args.label.partition("/")
        out = Path(args.out_dir) / task / subclass / f"{subclass}-pid{args.pid}-{int(time.time())}.csv"
    else:
        out = Path(args.out_dir) / f"sample-pid{args.pid}-{int(time.time())}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_sample(sample, out)
    print(out)
    if sample.truncated:
        log.warning("target vanished mid-recording; sample truncated to %.1f s",
                    sample.duration_s)
        return EXIT_PID_GONE
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = synth.preset_spec(
        args.preset,
        divergence=args.divergence,
        seed=args.seed,
        programs_for=args.programs_for,
        n_programs=args.n_programs,
    )
    dataset = synth.generate(spec)
    save_dataset(dataset, args.out)
    print(f"{args.out}: {len(dataset)} samples, {len(dataset.manifest)} subclasses")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    try:
        dataset = load_dataset(args.dataset, cumulative_to_delta=args.cumulative_to_delta)
        grid_builder = learn.full_rf_grid if args.classifier == "rf" else learn.full_svm_grid
        grid = grid_builder() if args.grid == "full" else None
        bundle = train_bundle(
            dataset,
            target=args.target,
            classifier=args.classifier,
            grid=grid,
            seed=args.seed,
            selection=args.selection,
            threads=args.threads,
        )
    except (DatasetError, ValueError) as exc:
        log.error("training failed: %s", exc)
        return EXIT_TRAINING
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    bundle.save(out)
    print(json.dumps({
        "model": str(out),
        "grid_winner": bundle.provenance["grid_winner"],
        "cv_f1": bundle.provenance["cv_f1"],
    }, sort_keys=True))
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset, cumulative_to_delta=args.cumulative_to_delta)
    kind = args.kind.replace("-", "_")
    grid_builder = learn.full_rf_grid if args.classifier == "rf" else learn.full_svm_grid
    kwargs = {}
    if args.lengths:
        kwargs["lengths"] = tuple(int(x) for x in args.lengths.split(","))
    if args.psi:
        kwargs["psi_list"] = tuple(float(x) for x in args.psi.split(","))
    if args.program_subclass:
        kwargs["program_subclass"] = args.program_subclass
    spec = ExperimentSpec(
        kind=kind,
        runs=args.runs,
        seed=args.seed,
        classifier=args.classifier,
        grid=grid_builder() if args.grid == "full" else None,
        threads=args.threads,
        **kwargs,
    )
    report = run_experiment(dataset, spec)
    out_dir = Path(args.out_dir) / f"experiment-{args.kind}"
    written = report.write_files(out_dir)
    print(report.text_table())
    for path in written:
        log.info("wrote %s", path)
    return EXIT_OK


def watch_scan(
    bundle_model: ModelBundle,
    candidates: list[sampler.ProcessCandidate],
    recorder,
    window_s: float,
    threshold: float,
    threads: int = 4,
) -> list[dict]:
    """Record each candidate for one window and classify it.

    ``recorder(pid, rate_hz, duration_s)`` returns a RawSample; injected so
    the scan logic is testable without live counters.
    """
    def probe(candidate: sampler.ProcessCandidate) -> dict | None:
        try:
            sample = recorder(candidate.pid, bundle_model.rate_hz, window_s)
        except sampler.SamplerError as exc:
            log.warning("pid %d: %s", candidate.pid, exc)
            return None
        label, score = bundle_model.predict_sample(sample)
        return {
            "pid": candidate.pid,
            "command": candidate.command,
            "cpu_share": round(candidate.cpu_share, 3),
            "verdict": label,
            "mining_score": round(score, 4),
            "alert": bool(score >= threshold),
        }

    with ThreadPoolExecutor(max_workers=max(1, min(threads, len(candidates) or 1))) as pool:
        results = list(pool.map(probe, candidates))
    return [r for r in results if r is not None]


def _default_recorder(pid: int, rate_hz: float, duration_s: float):
    return sampler.record(sampler.SamplerConfig(pid=pid, rate_hz=rate_hz, duration_s=duration_s))


def cmd_watch(args: argparse.Namespace) -> int:
    try:
        bundle_model = ModelBundle.load(args.model)
    except (BundleError, OSError, json.JSONDecodeError) as exc:
        log.error("cannot load model: %s", exc)
        return EXIT_USAGE
    host = sampler.machine_id()
    trained_on = bundle_model.provenance.get("machine_id", "unknown")
    if trained_on != host:
        message = (f"model was trained on {trained_on!r} but this host is {host!r}; "
                   "counter profiles do not transfer across processors")
        if args.strict:
            log.error("%s", message)
            return EXIT_STRICT_MISMATCH
        log.warning("%s", message)
    if not sampler.counters_available():
        log.error("performance counters are unavailable on this host")
        return EXIT_COUNTERS_DENIED

    iteration = 0
    while True:
        iteration += 1
        candidates = sampler.list_candidates(args.top_n)
        verdicts = watch_scan(bundle_model, candidates, _default_recorder,
                              args.window, args.threshold, threads=args.top_n)
        for verdict in verdicts:
            print(json.dumps(verdict, sort_keys=True), flush=True)
        if args.iterations and iteration >= args.iterations:
            return EXIT_OK
        time.sleep(max(args.interval - args.window, 0.0))


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except (ValueError, OSError) as exc:  # config file problems
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=args.log_level.upper(),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "record": cmd_record,
        "synth": cmd_synth,
        "train": cmd_train,
        "experiment": cmd_experiment,
        "watch": cmd_watch,
    }
    try:
        return handlers[args.command](args)
    except DatasetError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except sampler.CounterAccessError as exc:
        log.error("%s", exc)
        return EXIT_COUNTERS_DENIED
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
