"""
Command line entry point::

    smrlab <experiment> [--config FILE] [--seed N] [--out DIR] [--threads N]

Exit codes: 0 all acceptance windows met, 1 a window missed, 2 configuration
error, 3 inconclusive because of Monte Carlo noise.
"""
from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, load_config
from .errors import ConfigurationError, UsageError
from .experiments import run
from .report import EXIT_CONFIG, write_outputs

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smrlab", description="Finite element SPDE laboratory.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", help="TOML file with experiment keys")
    ap.add_argument("--seed", type=int, help="master seed (overrides the file)")
    ap.add_argument("--out", help="output directory (overrides the file)")
    ap.add_argument("--threads", type=int, help="worker cap; results do not depend on it")
    ap.add_argument("--no-plots", action="store_true", help="skip the SVG figures")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["output_dir"] = args.out
    if args.threads is not None:
        over["threads"] = args.threads
    try:
        cfg = load_config(args.config, args.experiment, **over)
        res = run(cfg)
    except (ConfigurationError, UsageError) as exc:
        print(f"smrlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_outputs(res, cfg.output_dir, plots=not args.no_plots)
    for c in res.checks:
        print(f"{'pass' if c.passed else 'FAIL'}  {c.name}: {c.value:.6g} {c.describe()}")
    for f in res.flags:
        print(f"flag  {f}")
    print(f"report: {cfg.output_dir}/report.md (exit {res.exit_code})")
    return res.exit_code


if __name__ == "__main__":     # pragma: no cover
    sys.exit(main())
