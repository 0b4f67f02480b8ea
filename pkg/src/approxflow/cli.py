"""``approxflow`` command line: run, exact, compare, tune and synth.

Exit codes: 0 success, 2 usage error, 3 input or pipeline error,
4 infeasible error targets. ``APPROXFLOW_SEED`` overrides ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from .asrs import asrs_transform, stratified_estimate
from .dataset import SamplingConfig, from_records, read_partitions
from .estimator import ConfidenceSpec
from .exceptions import ApproxFlowError, InfeasibleTargetsError
from .pipeline import BUILTIN_PIPELINES, builtin_pipeline, execute, execute_exact
from .provenance import render_tree
from .report import (
    compare,
    exact_to_csv,
    read_exact,
    read_report,
    report_json,
    report_rows,
    rows_to_csv,
    summarize,
)
from .synth import KeyDistribution, ValueDistribution, write_dataset
from .tuner import ErrorTargets, RateSearchConfig, run_with_targets

EXIT_OK, EXIT_USAGE, EXIT_PIPELINE, EXIT_INFEASIBLE = 0, 2, 3, 4
SEED_ENV = "APPROXFLOW_SEED"

logger = logging.getLogger("approxflow")


def _typed(convert, check, what):
    def parse(text):
        try:
            value = convert(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {what}: {text!r}") from None
        if not check(value):
            raise argparse.ArgumentTypeError(f"invalid {what}: {text!r}")
        return value
    return parse


rate_arg = _typed(float, lambda r: 0 < r <= 1, "rate (need 0 < r <= 1)")
open_unit_arg = _typed(float, lambda r: 0 < r < 1, "level (need 0 < c < 1)")
positive_int = _typed(int, lambda n: n >= 1, "positive integer")
nonneg_int = _typed(int, lambda n: n >= 0, "non-negative integer")
seed_arg = _typed(int, lambda s: True, "seed")


def _target_arg(text):
    try:
        return ErrorTargets.parse([text]).targets[0]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _dist_arg(cls):
    def parse(text):
        try:
            cls.parse(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
        return text
    return parse


def _pilot_confidence_arg(text):
    if text.lower() == "none":
        return None
    return open_unit_arg(text)


def _add_input(p):
    p.add_argument("--pipeline", required=True, choices=BUILTIN_PIPELINES)
    p.add_argument("--input", required=True, help="text file or directory of part files")
    p.add_argument("--partitions", type=positive_int,
                   help="partition count (default: files in a directory, else 1)")
    p.add_argument("--aggregate", choices=("sum", "mean"), default="sum",
                   help="final aggregate of the synth pipeline")
    p.add_argument("--seed", type=seed_arg, default=0)
    p.add_argument("--out", help="output path (default: stdout)")


def _add_estimation(p):
    p.add_argument("--confidence", type=open_unit_arg, default=0.95)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--threads", type=positive_int, default=os.cpu_count() or 1)


def build_parser():
    parser = argparse.ArgumentParser(prog="approxflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="approximate run at given load rates")
    _add_input(run)
    _add_estimation(run)
    run.add_argument("--partition-rate", type=rate_arg, default=1.0)
    run.add_argument("--item-rate", type=rate_arg, default=1.0)
    run.add_argument("--dump-provenance", metavar="PATH",
                     help="write the provenance tree shape to PATH")
    run.add_argument("--asrs", action="store_true",
                     help="sample with per-key stratified reservoirs instead of item sampling")
    run.add_argument("--reservoir-size", type=positive_int, default=1000,
                     help="total ASRS reservoir budget across partitions")

    exact = sub.add_parser("exact", help="exact per-key aggregates")
    _add_input(exact)

    cmp_ = sub.add_parser("compare", help="compare an approximate report with exact values")
    cmp_.add_argument("--approx", required=True)
    cmp_.add_argument("--exact", required=True)
    cmp_.add_argument("--out")

    tune = sub.add_parser("tune", help="choose load rates for error-bound targets, then run")
    _add_input(tune)
    _add_estimation(tune)
    tune.add_argument("--target", type=_target_arg, action="append", required=True,
                      metavar="P=B", help="percentile P of relative bounds at most B")
    tune.add_argument("--pilot-fraction", type=rate_arg, default=0.10)
    tune.add_argument("--step", type=rate_arg, default=0.001)
    tune.add_argument("--min-rate", type=rate_arg)
    tune.add_argument("--pilot-confidence", type=_pilot_confidence_arg, default=0.95,
                      help="upper-limit level for pilot variances, or 'none' for plug-in")

    synth = sub.add_parser("synth", help="generate keyed synthetic data with ground truth")
    synth.add_argument("--keys", type=positive_int, required=True)
    synth.add_argument("--partitions", type=positive_int, required=True)
    synth.add_argument("--items-per-partition", type=nonneg_int, required=True)
    synth.add_argument("--distribution", type=_dist_arg(KeyDistribution), default="uniform",
                       help="uniform or zipf(s)")
    synth.add_argument("--value-dist", type=_dist_arg(ValueDistribution), default="uniform",
                       help="uniform, normal(mu,sigma) or constant(c)")
    synth.add_argument("--seed", type=seed_arg, default=0)
    synth.add_argument("--out", required=True, help="output directory")
    return parser


def _seed(args):
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return args.seed
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None


class UsageError(Exception):
    pass


def _partition_count(args):
    if args.partitions:
        return args.partitions
    if os.path.isdir(args.input):
        files = [n for n in os.listdir(args.input)
                 if not n.startswith(".") and not n.endswith(".json")
                 and os.path.isfile(os.path.join(args.input, n))]
        return max(1, len(files))
    return 1


def _chain(args):
    return builtin_pipeline(args.pipeline, {"aggregate": args.aggregate})


def _write(path, text):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_report(args, per_key, metadata, started):
    rows = report_rows(per_key)
    summary = summarize(rows, metadata, round(time.perf_counter() - started, 6))
    if args.format == "json":
        _write(args.out, report_json(rows, summary))
    else:
        _write(args.out, rows_to_csv(rows))
        if args.out:
            _write(args.out + ".summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_run(args):
    started = time.perf_counter()
    seed = _seed(args)
    chain = _chain(args)
    parts = read_partitions(args.input, _partition_count(args))
    if args.asrs:
        if args.item_rate != 1.0:
            raise UsageError("--asrs replaces item sampling; leave --item-rate at 1")
        if args.dump_provenance:
            raise UsageError("--dump-provenance is not available with --asrs")
        ds = from_records(parts, SamplingConfig(args.partition_rate, 1.0, seed, args.confidence))
        _, states = asrs_transform(ds, chain.ops, args.reservoir_size)
        per_key = stratified_estimate(
            states, ds.origin_partition_count, ConfidenceSpec(args.confidence), chain.final_stage
        )
        metadata = {
            "pipeline": chain.name, "aggregate": chain.final_stage,
            "partition_rate": args.partition_rate, "item_rate": 1.0, "seed": seed,
            "confidence": args.confidence, "depth": 2, "sampler": "asrs",
            "reservoir_size": args.reservoir_size,
        }
    else:
        ds = from_records(
            parts, SamplingConfig(args.partition_rate, args.item_rate, seed, args.confidence)
        )
        result = execute(ds, chain, n_jobs=args.threads, keep_tree=bool(args.dump_provenance))
        if args.dump_provenance:
            _write(args.dump_provenance, render_tree(result.tree))
        per_key, metadata = result.per_key, result.metadata
    _emit_report(args, per_key, metadata, started)
    return EXIT_OK


def cmd_exact(args):
    seed = _seed(args)
    parts = read_partitions(args.input, _partition_count(args))
    values = execute_exact(from_records(parts, SamplingConfig(seed=seed)), _chain(args))
    _write(args.out, exact_to_csv(values))
    return EXIT_OK


def cmd_compare(args):
    rows = read_report(args.approx)
    exact = read_exact(args.exact)
    per_key, summary = compare(rows, exact)
    doc = {"schema": "approxflow.compare/1", "summary": summary, "rows": per_key}
    _write(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_tune(args):
    started = time.perf_counter()
    seed = _seed(args)
    targets = ErrorTargets(tuple(sorted(args.target)))
    if args.step > args.pilot_fraction:
        raise UsageError("--step must not exceed --pilot-fraction")
    cfg = RateSearchConfig(args.pilot_fraction, args.step, args.min_rate, args.pilot_confidence)
    tuned = run_with_targets(
        args.input, _chain(args), targets, _partition_count(args),
        cfg=cfg, seed=seed, confidence=args.confidence, n_jobs=args.threads,
    )
    metadata = dict(tuned.result.metadata)
    summary = _emit_report(args, tuned.result.per_key, metadata, started)
    predicted = {f"p{p:g}": tuned.predicted(p) for p, _ in targets}
    logger.info("chosen rates %g/%g; predicted %s; achieved %s", tuned.partition_rate,
                tuned.item_rate, predicted, summary["error_bound_percentiles"])
    return EXIT_OK


def cmd_synth(args):
    write_dataset(args.out, args.keys, args.partitions, args.items_per_partition,
                  args.distribution, args.value_dist, _seed(args))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "exact": cmd_exact,
    "compare": cmd_compare,
    "tune": cmd_tune,
    "synth": cmd_synth,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="approxflow: %(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"approxflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleTargetsError as exc:
        print(f"approxflow: infeasible targets: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ApproxFlowError, OSError, ValueError, TypeError) as exc:
        print(f"approxflow: error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
