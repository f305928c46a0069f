#!/usr/bin/env python3
"""Run the desk-scale sweep end to end and print the report.

Produces every table the analysis needs (metrics.csv, fits.csv, bpda.csv,
projection.csv, ...) under --out.  Reruns reuse existing checkpoints, so
an interrupted sweep picks up where it stopped.
"""

import argparse

from stochsec.experiment import run_experiment
from stochsec.plans import desk_plan


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/desk", help="run directory")
    parser.add_argument("--workers", type=int, default=4,
                        help="parallel workers for independent cells")
    args = parser.parse_args()

    out = run_experiment(desk_plan(), args.out, workers=args.workers)
    print((out / "report.txt").read_text(), end="")


if __name__ == "__main__":
    main()
