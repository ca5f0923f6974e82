"""Command-line front end.

    streamal run --config exp.cfg [--set key=value ...] [--seed N] [--trials N] [--out DIR]
    streamal compare --config exp.cfg --strategies info_rv random [...]
    streamal inspect-dataset --dataset mnist --data-dir DIR
    streamal validate-config --config exp.cfg [--set key=value ...]
    streamal account --dataset mnist --strategy preemption -k 32

Errors are printed as one line on stderr: ``error code=<n> message=<text>``.
Exit 2 means bad input (usage or configuration), exit 1 a runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness.config import ConfigError, ExperimentConfig, load_config
from .harness.datasets import DATASET_SHAPES, load_named
from .harness.experiment import run_experiment
from .harness.resources import REFERENCE_FEATURE_LENGTH, MemoryModel, account_memory, memory_formula
from .harness.results import SUMMARY_COLUMNS, summarize, summary_rows, write_csv, write_results
from .strategies import STRATEGIES

EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(code: int, message: str) -> int:
    print(f"error code={code} message={' '.join(str(message).split())}", file=sys.stderr)
    return code


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value experiment file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key; repeatable, applied left to right")
    p.add_argument("--seed", type=int, help="base seed (overrides config)")
    p.add_argument("--trials", type=int, help="trial count (overrides config)")
    p.add_argument("--out", help="output directory (default: config 'out', i.e. ./results)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="streamal", description="Stream active-learning experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one experiment and write CSVs")
    _add_config_args(p)

    p = sub.add_parser("compare", help="run several strategies on shared seeds")
    _add_config_args(p)
    p.add_argument("--strategies", nargs="+", required=True, metavar="NAME")

    p = sub.add_parser("inspect-dataset", help="print split sizes, shape and class counts")
    _add_config_args(p)
    p.add_argument("--dataset")
    p.add_argument("--data-dir")

    p = sub.add_parser("validate-config", help="parse and validate a config")
    _add_config_args(p)

    p = sub.add_parser("account", help="strategy memory overhead in bytes")
    p.add_argument("--dataset", required=True)
    p.add_argument("--strategy", required=True)
    p.add_argument("-k", type=int, required=True)
    p.add_argument("--feature-length", type=int, help="defaults to the reference CNN flatten size")
    return parser


def _config_from(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.trials is not None:
        overrides.append(f"trials={args.trials}")
    if args.out is not None:
        overrides.append(f"out={args.out}")
    return load_config(args.config, overrides)


def _print_summary(records, prefix: str = "") -> None:
    for n, mean, var, labels in summarize(records):
        print(f"{prefix}retrain {n}: mean_accuracy={mean:.4f} var_accuracy={var:.6f} "
              f"mean_labels_spent={labels:g}")


def cmd_run(args) -> int:
    cfg = _config_from(args)
    result = run_experiment(cfg)
    files = write_results(result.records, result.decisions, cfg.out)
    _print_summary(result.records)
    print(f"wrote {files['records']}, {files['decisions']}, {files['summary']}")
    if result.failures:
        first = result.failures[0]
        return _fail(EXIT_RUNTIME, f"{len(result.failures)} trial(s) failed; trial {first.trial} "
                                   f"retrain {first.retrain_index}: {first.message}")
    return 0


def cmd_compare(args) -> int:
    names = [n for item in args.strategies for n in item.split(",") if n]
    if len(names) < 2:
        raise UsageError("compare needs at least two strategies")
    unknown = [n for n in names if n not in STRATEGIES]
    if unknown:
        raise ConfigError(f"strategy: unknown strategy {unknown[0]!r}", "strategy")
    base = _config_from(args)
    configs = [base.replace(strategy=name) for name in names]
    joined = []
    failures = []
    for name, cfg in zip(names, configs):
        result = run_experiment(cfg)
        write_results(result.records, result.decisions, Path(base.out) / name)
        _print_summary(result.records, prefix=f"{name} ")
        joined.extend([name] + row for row in summary_rows(result.records))
        failures.extend(result.failures)
    out = Path(base.out) / "compare_summary.csv"
    write_csv(out, ("strategy",) + SUMMARY_COLUMNS, joined)
    print(f"wrote {out}")
    if failures:
        return _fail(EXIT_RUNTIME, f"{len(failures)} trial(s) failed")
    return 0


def cmd_inspect(args) -> int:
    cfg = _config_from(args)
    changes = {}
    if args.dataset:
        changes["dataset"] = args.dataset
    if args.data_dir:
        changes["data_dir"] = args.data_dir
    cfg = cfg.replace(**changes)
    train, test = load_named(cfg.dataset, cfg.data_dir, cfg.synthetic_options())
    print(f"dataset: {cfg.dataset}")
    print(f"shape: {'x'.join(map(str, train.shape))}  classes: {train.class_count}")
    for name, split in (("train", train), ("test", test)):
        hist = " ".join(str(c) for c in split.class_histogram())
        print(f"{name}: {len(split)} items  per-class: {hist}")
    return 0


def cmd_validate(args) -> int:
    cfg = _config_from(args)
    print("ok")
    print(cfg.to_text(), end="")
    return 0


def cmd_account(args) -> int:
    if args.strategy not in STRATEGIES:
        raise UsageError(f"unknown strategy {args.strategy!r}")
    if args.dataset not in DATASET_SHAPES:
        raise UsageError(f"unknown dataset {args.dataset!r}")
    if args.k < 0:
        raise UsageError("k must be >= 0")
    shape, _ = DATASET_SHAPES[args.dataset]
    feature_length = args.feature_length or REFERENCE_FEATURE_LENGTH[args.dataset]
    mem = MemoryModel.for_shape(args.k, shape, feature_length)
    total = account_memory(args.strategy, mem)
    expansion = (memory_formula(args.strategy)
                 .replace("M_I", str(mem.image_bytes)).replace("M_f", str(mem.feature_bytes))
                 .replace("k", str(args.k)))
    print(f"{total} bytes  {args.strategy} {args.dataset}: {memory_formula(args.strategy)} = {expansion}  "
          f"(M_I={mem.image_bytes} B, M_f={mem.feature_bytes} B)")
    return 0


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "inspect-dataset": cmd_inspect,
    "validate-config": cmd_validate,
    "account": cmd_account,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except (UsageError, ConfigError) as exc:
        return _fail(EXIT_USAGE, exc)
    except FileNotFoundError as exc:
        return _fail(EXIT_RUNTIME, exc)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one diagnostic line
        logging.getLogger(__name__).debug("command failed", exc_info=True)
        return _fail(EXIT_RUNTIME, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
