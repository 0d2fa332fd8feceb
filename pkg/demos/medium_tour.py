"""A look at the random medium: range, slopes, and where the pointwise
Lipschitz condition for arrival times breaks down.

    python demos/medium_tour.py --seed 3
"""
import argparse
from dataclasses import replace

import numpy as np

from forcedmcf import FieldSpec, ls_condition_margin, sample_field


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--size", type=float, default=20.0)
    args = ap.parse_args()

    spec = FieldSpec()
    f = sample_field(spec, args.seed)
    xs = np.linspace(0, args.size, 401)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    c = f.evaluate(X, Y)
    print(f"c on [0,{args.size:g}]^2: min {c.min():.4f}  max {c.max():.4f}  mean {c.mean():.4f}")
    print(f"share of the plane at c_min: {np.mean(c == spec.c_min):.3f}")
    print(f"certified slope bound 1.5*a_hi/r = {spec.certified_lipschitz():.3f} (L0 = {spec.lipschitz_bound:g})")

    box = ((0, 5), (0, 5))
    print(f"c^2 - |Dc| margin, standard medium: {ls_condition_margin(f, box, 0.02):+.3f}")
    steep = replace(spec, bump_radius=0.1, lipschitz_bound=15.0)
    g = sample_field(steep, args.seed)
    print(f"c^2 - |Dc| margin, r = 0.1 bumps:   {ls_condition_margin(g, box, 0.01):+.3f}"
          "  (negative: condition fails, c stays positive)")

    # two points further apart than one bump diameter plus one see independent media
    n = 500
    a = np.array([sample_field(spec, s).evaluate((0.3, 0.3)) for s in range(n)])
    b = np.array([sample_field(spec, s).evaluate((2.1, 0.3)) for s in range(n)])
    print(f"correlation at separation 1.8 over {n} seeds: {np.corrcoef(a, b)[0, 1]:+.3f}")


if __name__ == "__main__":
    main()
