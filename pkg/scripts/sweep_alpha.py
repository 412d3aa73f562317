#!/usr/bin/env python3
"""Sweep the unlabeled-loss weight on the synthetic benchmark.

Writes per-run reports, an aggregate CSV, and accuracy_vs_alpha.csv
under --out. The grid is log-spaced over [10^-1.5, 10^0.75].
"""

import argparse
import os
import sys
import tempfile

import numpy as np

from semicon.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--points", type=int, default=10)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="reports/alpha_sweep")
    args = ap.parse_args()

    grid = np.logspace(-1.5, 0.75, args.points)
    config = "\n".join([
        "method = ours",
        "mem_size = 50",
        "mem_batch = 20",
        f"seed = {args.seed}",
        f"reps = {args.reps}",
        f"out = {args.out}",
        "sweep_alpha = " + ", ".join(f"{a:.6g}" for a in grid),
    ]) + "\n"
    fd, path = tempfile.mkstemp(suffix=".cfg", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(config)
        code = cli_main(["run", path])
        if code == 0:
            code = cli_main(["plot-data", args.out])
        return code
    finally:
        os.unlink(path)


if __name__ == "__main__":
    sys.exit(main())
