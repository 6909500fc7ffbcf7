"""End-to-end reproduction of the three-input benchmark.

Solves the Riccati equation, runs the exact policy gradient to 1e-6 and the
sample-based variant over ten seeds, then writes the histories, SVG charts
and a short summary table into the output directory.

    python3 scripts/reproduce.py --out repro
"""

import argparse
import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from erlq.bounds import sbrpg_schedule
from erlq.config import benchmark_experiment
from erlq.exact import solve_are
from erlq.plotting import line_chart, plot_rpg, plot_sbrpg
from erlq.rpg import RpgConfig, run_rpg
from erlq.sbrpg import run_sbrpg


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="repro")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cfg = benchmark_experiment()
    params = cfg.system
    sol = solve_are(params)
    K0, Sigma0 = cfg.policy.arrays(params.n)
    print(f"f* = {sol.f_star:.12g}  P* = {sol.p_star:.12g}")

    rpg = run_rpg(params, K0, Sigma0, RpgConfig(epsilon=1e-6), sol)
    rpg.write_csv(out / "rpg.csv")
    plot_rpg(rpg, out)
    print(f"RPG: {rpg.meta['iterations']} iterations (bound {rpg.meta['theoretical_N']})")

    summary = []
    gaps = []
    for seed in range(args.seeds):
        hist = run_sbrpg(params, K0, Sigma0, replace(cfg.sbrpg, seed=seed, workers=args.workers), sol)
        seed_dir = out / f"seed{seed}"
        seed_dir.mkdir(exist_ok=True)
        hist.write_csv(seed_dir / "sbrpg.csv")
        plot_sbrpg(hist, seed_dir)
        rel = hist.column("relative_gap")
        gaps.append(rel)
        k_err, s_err = hist.column("k_sq_err"), hist.column("sigma_sq_err")
        summary.append({"seed": seed, "relative_gap": rel[-1],
                        "k_reduction": k_err[0] / k_err[-1], "sigma_reduction": s_err[0] / s_err[-1]})
        print(f"seed {seed}: relative gap {rel[-1]:.4f}")

    med = np.median(np.array(gaps), axis=0)
    line_chart(np.arange(med.size), med, out / "sbrpg_median_relative_gap.svg",
               "median relative error", log=True, title=f"median over {args.seeds} seeds")
    sched = sbrpg_schedule(params, K0, Sigma0, 1e-3, 0.1, solution=sol)
    doc = {"f_star": sol.f_star, "runs": summary,
           "theory": {"N_rpg": sched.N_rpg, "N_sb": sched.N_sb, "M": sched.schedule["M"],
                      "l": sched.schedule["l"]}}
    (out / "summary.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(f"median final relative gap {np.median([r['relative_gap'] for r in summary]):.4f}")


if __name__ == "__main__":
    main()
