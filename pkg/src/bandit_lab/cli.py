"""Command-line entry point: ``bandit-lab run | aggregate | compare``."""

from __future__ import annotations

import argparse
import sys

from .core import BanditError
from .harness import RunError, aggregate_dir, format_table, load_config, run_grid, summarize_dir


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        # One-line diagnostic and exit code 2, without the usage banner.
        raise SystemExit(_fail(f"{self.prog}: {message}", 2))


def _fail(message: str, code: int = 1) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bandit-lab", description="Conservative contextual bandit experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="execute a configured grid")
    run.add_argument("--config", required=True, help="TOML file of flat dotted keys")
    run.add_argument("--out", required=True, help="output run directory")

    agg = sub.add_parser("aggregate", help="write mean/stderr curves")
    agg.add_argument("--in", dest="in_dir", required=True, help="run directory")
    agg.add_argument("--out", required=True, help="output CSV path")

    cmp_ = sub.add_parser("compare", help="print a summary table")
    cmp_.add_argument("--in", dest="in_dir", required=True, help="run directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            manifest = run_grid(load_config(args.config), args.out)
            print(f"wrote {len(manifest['runs'])} runs to {args.out}")
        elif args.command == "aggregate":
            for path in aggregate_dir(args.in_dir, args.out):
                print(f"wrote {path}")
        else:
            print(format_table(summarize_dir(args.in_dir)))
    except (BanditError, RunError, OSError) as exc:
        return _fail(str(exc).splitlines()[0] if str(exc) else type(exc).__name__)
    return 0
