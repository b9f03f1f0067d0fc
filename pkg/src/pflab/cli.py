"""Command line entry point: ``pflab SUBCOMMAND --config PATH [options]``."""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError
from .experiment import (
    BENCHMARKS,
    EXIT_CONFIG,
    OUT_ENV,
    SUBCOMMANDS,
    load_config,
    run_experiment,
)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pflab",
        description="Simulate particle-field systems, analyse small divisors and compute periodic orbits.",
        epilog=f"Output goes to --out, else output.directory, else ${OUT_ENV}/<subcommand>-seed<N>. "
               "Exit codes: 0 ok, 2 invalid config, 3 resonance, 4 no convergence. "
               f"Bundled benchmark configs: {', '.join(BENCHMARKS)}.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="config JSON path or bundled benchmark name")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--allow-resonant", action="store_true",
                    help="accept periods whose sigma fails the Diophantine scan")
    ap.add_argument("--tol", type=float, help="override the solver tolerance")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, allow_resonant=args.allow_resonant or None)
    except ConfigError as exc:
        for path, msg in exc.violations:
            print(f"config error: {path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    if args.tol is not None and not args.tol > 0:
        print("config error: --tol: must be positive", file=sys.stderr)
        return EXIT_CONFIG
    result = run_experiment(cfg, args.subcommand, args.out, args.tol)
    status = "ok" if result.exit_code == 0 else "failed"
    print(f"{args.subcommand}: {status} (exit {result.exit_code}); outputs in {result.out_dir}")
    return result.exit_code
