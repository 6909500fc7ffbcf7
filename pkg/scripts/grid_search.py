"""Grid search over SB-RPG hyperparameters on the three-input benchmark.

Each setting runs a few seeds; a run counts as a success when its final
relative gap is at most 10% and both squared policy errors shrank at least
tenfold. A run that leaves the admissible set counts as a failure (small M
makes the covariance step unstable). Results stream to stdout and to a CSV.

    python3 scripts/grid_search.py --seeds 4 --out grid.csv
    python3 scripts/grid_search.py --quick
"""

import argparse
import csv
import itertools
import time
from dataclasses import replace

import numpy as np

from erlq.config import benchmark_experiment
from erlq.errors import ErlqError
from erlq.exact import solve_are
from erlq.sbrpg import run_sbrpg

GRID = {
    "M": [500, 1500, 3000],
    "l": [10, 20],
    "r1": [0.1, 0.3],
    "r2": [0.03, 0.05],
    "eta1": [0.005, 0.01, 0.02],
    "eta2": [0.05],
    "N": [150, 300],
}
QUICK = {"M": [200, 1500], "l": [10], "r1": [0.3], "r2": [0.03], "eta1": [0.01], "eta2": [0.05], "N": [60]}


def score(params, sol, K0, Sigma0, base, setting, seeds):
    rows = []
    for seed in range(seeds):
        try:
            hist = run_sbrpg(params, K0, Sigma0, replace(base, seed=seed, **setting), sol)
        except ErlqError:
            rows.append((np.inf, 0.0, 0.0))
            continue
        k_err, s_err = hist.column("k_sq_err"), hist.column("sigma_sq_err")
        rows.append((hist.column("relative_gap")[-1], k_err[0] / k_err[-1], s_err[0] / s_err[-1]))
    rows = np.array(rows)
    ok = (rows[:, 0] <= 0.10) & (rows[:, 1] >= 10) & (rows[:, 2] >= 10)
    return rows, int(ok.sum())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=4)
    ap.add_argument("--out", default="grid_search.csv")
    ap.add_argument("--quick", action="store_true", help="two settings only")
    args = ap.parse_args()

    cfg = benchmark_experiment()
    params = cfg.system
    sol = solve_are(params)
    K0, Sigma0 = cfg.policy.arrays(params.n)
    grid = QUICK if args.quick else GRID
    keys = list(grid)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys + ["passes", "median_relative_gap", "min_k_reduction", "min_sigma_reduction",
                           "seconds_per_run"])
        for values in itertools.product(*(grid[k] for k in keys)):
            setting = dict(zip(keys, values))
            t = time.perf_counter()
            rows, passes = score(params, sol, K0, Sigma0, cfg.sbrpg, setting, args.seeds)
            per_run = (time.perf_counter() - t) / args.seeds
            line = [*values, passes, np.median(rows[:, 0]), rows[:, 1].min(), rows[:, 2].min(), per_run]
            w.writerow(line)
            fh.flush()
            print(setting, f"pass {passes}/{args.seeds}", f"median gap {np.median(rows[:, 0]):.3f}",
                  f"{per_run:.1f} s/run")


if __name__ == "__main__":
    main()
