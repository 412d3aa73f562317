#!/usr/bin/env python3
"""Label budget of reservoir insertion for a range of memory sizes.

For each memory size M the oracle is called once per reservoir
insertion, so the expected number of calls over a stream of N samples
is M(1 + H_N - H_M). Prints the closed form next to a Monte-Carlo
estimate over --trials simulated streams.
"""

import argparse
import sys

import numpy as np

from semicon.memory import expected_oracle_calls, simulate_oracle_calls


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--stream-length", type=int, default=50_000)
    ap.add_argument("--sizes", type=int, nargs="+",
                    default=[200, 500, 2000, 5000])
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    n = args.stream_length
    rng = np.random.default_rng(args.seed)
    print(f"stream length N = {n}, {args.trials} trials per size")
    print(f"{'M':>6} {'expected %':>11} {'simulated %':>12} {'std %':>8}")
    for m in args.sizes:
        calls = simulate_oracle_calls(m, n, args.trials, rng)
        exact = 100 * expected_oracle_calls(m, n) / n
        mean = 100 * calls.mean() / n
        std = 100 * calls.std(ddof=1) / n
        print(f"{m:>6} {exact:>11.2f} {mean:>12.2f} {std:>8.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
