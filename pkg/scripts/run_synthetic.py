#!/usr/bin/env python3
"""Run every method on the synthetic benchmark and print a summary table.

Each method sees the same sequence of streams (seed-paired repetitions),
so the final column differences are attributable to the method alone.
"""

import argparse
import sys

import numpy as np

from semicon.models import MlpSpec
from semicon.trainers import METHODS, MEMORY_METHODS, TrainConfig, run
from semicon.stream import make_synthetic


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--mem-size", type=int, default=50)
    ap.add_argument("--mem-batch", type=int, default=20)
    ap.add_argument("--separation", type=float, default=3.0)
    ap.add_argument("--per-class", type=int, default=50)
    args = ap.parse_args()

    model = MlpSpec(in_dim=6)
    print(f"{'method':>10} {'final_avg':>12} {'labels':>8}")
    for method in METHODS:
        finals, fractions = [], []
        for rep in range(args.reps):
            seed = args.seed + rep
            stream = make_synthetic(4, 6, args.separation, args.per_class, 2,
                                    seed=100 + seed, batch_size=10,
                                    test_per_class=25)
            kw = {}
            if method in MEMORY_METHODS:
                kw = {"mem_size": args.mem_size, "mem_batch": args.mem_batch}
            cfg = TrainConfig(method=method, seed=seed, stream_batch=10, **kw)
            _, _, report = run(cfg, stream, model)
            finals.append(report.final_avg)
            fractions.append(report.label_fraction)
        std = np.std(finals, ddof=1) if len(finals) > 1 else 0.0
        print(f"{method:>10} {np.mean(finals):7.3f}±{std:.3f} "
              f"{np.mean(fractions):8.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
