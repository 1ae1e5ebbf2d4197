"""Command-line entry point: run scenarios, validate configs, hash traces.

Exit codes: 0 success, 1 config error, 2 invariant violation, 3 I/O error.
"""
from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .scenarios import InvariantViolation, emit_metrics, run_scenario
from .trace import trace_hash


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="situated",
        description="Deterministic situated multi-agent scenario runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario to completion")
    run.add_argument("config")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--steps", type=int, help="override run length in ticks")
    run.add_argument("--trace-out", help="write the event trace here")
    run.add_argument("--metrics-out", help="write run metrics here")

    validate = sub.add_parser("validate", help="check a config and exit")
    validate.add_argument("config")

    hash_cmd = sub.add_parser("trace-hash", help="hash a trace file")
    hash_cmd.add_argument("trace_file")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        try:
            load_config(args.config)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        print("ok")
        return 0
    if args.command == "trace-hash":
        try:
            with open(args.trace_file, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            print(f"cannot read trace: {exc}", file=sys.stderr)
            return 3
        print(trace_hash(text))
        return 0
    # run
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        config.seed = args.seed
    if args.steps is not None:
        config.run_ticks = args.steps
    try:
        metrics, trace_text = run_scenario(config)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    try:
        if args.trace_out:
            with open(args.trace_out, "w", encoding="utf-8") as fh:
                fh.write(trace_text)
        if args.metrics_out:
            emit_metrics(metrics, args.metrics_out)
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return 3
    for line in metrics.as_lines():
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
