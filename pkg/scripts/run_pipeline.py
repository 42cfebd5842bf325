#!/usr/bin/env python3
"""Run the full experiment pipeline on the default seeded corpus.

Generates 50k synthetic sessions, trains the FP and HP predictors, evaluates
the three approaches across the feedback-rate sweep, and prints the agreement
analysis, with a wall-clock breakdown at the end.

Usage:
    python scripts/run_pipeline.py [--out-dir runs/default] [--seed 7] [--config cfg.ini]
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from satfusion.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="runs/default")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--config", default=None)
    parser.add_argument("--force", action="store_true", help="regenerate the corpus")
    args = parser.parse_args()

    argv = ["--out-dir", args.out_dir]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    if args.config:
        argv += ["--config", args.config]
    argv += ["sweep"]
    if args.force:
        argv += ["--force"]
    return cli_main(argv)


if __name__ == "__main__":
    raise SystemExit(main())
