"""Flat fronts through the random medium: mean arrival times, the speed
estimate t/mu(t), its drift between t and 2t, and front roughness.

    python demos/effective_speed.py --seeds 8 --jobs 1
"""
import argparse

import numpy as np

from forcedmcf import FieldSpec
from forcedmcf import experiments as X


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=8)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--times", default="10,20,40")
    args = ap.parse_args()
    times = [float(t) for t in args.times.split(",")]

    plan = X.ExperimentPlan(spec=FieldSpec(), times=times, n_seeds=args.seeds,
                            flat_times=times, flat_seeds=args.seeds)
    seeds, M, W, res = X.collect_samples(plan, (1.0, 0.0), jobs=args.jobs, with_width=True)
    est = X.speed_estimate((1.0, 0.0), times, seeds, M)
    print(f"{'t':>6} {'mu(t)':>9} {'sd':>7} {'t/mu':>7} {'median W/t':>11}")
    for q, t in enumerate(times):
        print(f"{t:6g} {est.mu[q]:9.4f} {est.sigma[q]:7.4f} {t / est.mu[q]:7.4f} "
              f"{np.nanmedian(W[:, q]) / t:11.4f}")
    lo, hi = est.ci
    print(f"c_bar = {est.c_bar:.4f}  (95% bootstrap {lo:.4f} .. {hi:.4f}); "
          f"the spatial mean of c is about 1.1")
    for t, d in X.speed_convergence(est).items():
        print(f"|t/mu(t) - 2t/mu(2t)| at t={t:g}: {d:.5f}")
    print(f"wall per seed: {np.mean([r['wall'] for r in res]):.1f}s")


if __name__ == "__main__":
    main()
