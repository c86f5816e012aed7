"""Command-line entry points: generate | train | evaluate | sweep.

Exit codes: 0 on success, 1 on usage or configuration errors, 2 on data or
numeric errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .errors import ConfigError, DataError, NumericError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures through our exit codes
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="demolearn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", required=True, help="output directory")

    p_gen = sub.add_parser("generate", help="write dataset files per budget plus the test set")
    common(p_gen)

    p_train = sub.add_parser("train", help="train one method at one budget")
    common(p_train)
    p_train.add_argument("--method", required=True)
    p_train.add_argument("--budget", required=True, type=int)

    p_eval = sub.add_parser("evaluate", help="evaluate trained models on the test episodes")
    common(p_eval)
    p_eval.add_argument("--method", help="restrict to one method")
    p_eval.add_argument("--budget", type=int, help="restrict to one budget")

    p_sweep = sub.add_parser("sweep", help="generate, train and evaluate every cell")
    common(p_sweep)
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel cells")
    return parser


def load_config(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    return harness.normalize_config(raw)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config)
        paths = harness.RunPaths(args.out)
        if args.command == "generate":
            harness.cmd_generate(cfg, paths)
        elif args.command == "train":
            path = harness.cmd_train(cfg, paths, args.method, args.budget)
            print(f"model written: {path}")
        elif args.command == "evaluate":
            methods = [args.method] if args.method else cfg["methods"]
            budgets = [args.budget] if args.budget else cfg["dataset"]["budgets"]
            rows = []
            for method in methods:
                for budget in budgets:
                    row = harness.cmd_evaluate(cfg, paths, method, budget)
                    rows.append(row)
                    print(harness.format_csv_row(row))
            table = harness.write_table(cfg, paths, rows)
            print(f"table written: {table}")
        elif args.command == "sweep":
            table = harness.cmd_sweep(cfg, paths, jobs=args.jobs)
            print(f"table written: {table}")
        return 0
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
