"""CLI entry point for the fixpool testbed."""

import argparse
import logging
import sys

from .errors import FixpoolError
from .runner import DIAGNOSTICS, cmd_count_pools, cmd_diagnose, cmd_eval, cmd_oracle, cmd_train

EXIT_IO = 3


def parse_args(argv=None):
    parser = argparse.ArgumentParser(
        prog="fixpool",
        description="Train and diagnose meta-learners under the ML and fixed-support-pool objectives.",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (
        ("train", "Train with the configured objective; writes trajectory.csv, final.ckpt, pools.csv"),
        ("eval", "Evaluate a checkpoint on the ML objective; writes eval.csv"),
        ("oracle", "Run the linear-regression oracle suites; writes oracle.csv"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="Experiment config file (key = value lines)")

    diag = sub.add_parser("diagnose", help="Run a generalization diagnostic; writes CSV (and SVG for curves)")
    diag.add_argument("which", choices=DIAGNOSTICS)
    diag.add_argument("config", help="Experiment config file (key = value lines)")

    count = sub.add_parser("count-pools", help="Print log10 of the pool count and the reduction factor")
    count.add_argument("n_classes", type=int)
    count.add_argument("per_class", type=int)
    count.add_argument("k", type=int)
    count.add_argument("n_way", type=int)
    return parser.parse_args(argv)


def _dispatch(args) -> int:
    if args.command == "train":
        return cmd_train(args.config)
    if args.command == "eval":
        return cmd_eval(args.config)
    if args.command == "diagnose":
        return cmd_diagnose(args.config, args.which)
    if args.command == "oracle":
        return cmd_oracle(args.config)
    return cmd_count_pools(args.n_classes, args.per_class, args.k, args.n_way)


def main(argv=None):
    args = parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        code = _dispatch(args)
    except KeyboardInterrupt:
        print("\nInterrupted.", file=sys.stderr)
        sys.exit(1)
    except FixpoolError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(e.exit_code)
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_IO)
    sys.exit(code)


if __name__ == "__main__":
    main()
