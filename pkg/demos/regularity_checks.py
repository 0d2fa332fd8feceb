"""The nine arrival-time checks for one medium seed, as a table.

    python demos/regularity_checks.py --seed 0
"""
import argparse
import time

from forcedmcf import verify_suite
from forcedmcf.experiments import derive_seeds


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0, help="master seed")
    args = ap.parse_args()
    s = derive_seeds(args.seed, 1)[0]
    t0 = time.perf_counter()
    reps = verify_suite(s)
    print(f"medium seed {s}  ({time.perf_counter() - t0:.0f}s)")
    print(f"{'check':24s} {'violation':>11s} {'tolerance':>10s}  pass")
    for r in reps:
        print(f"{r.check:24s} {r.max_violation:11.4g} {r.tolerance:10.4g}  {r.passed}")
    ls = reps[1].details
    print(f"fitted large-scale constants: tau_hat={ls['tau_hat']:.3f}, L_hat={ls['L_hat']:.3f} "
          f"(bounds 13, 6.5)")


if __name__ == "__main__":
    main()
