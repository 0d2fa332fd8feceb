"""Curvature flow of circles against the exact and ODE radii.

With forcing off a disc shrinks as r^2 = r0^2 - 2t; with c = 1 a disc
of radius 2 grows along dr/dt = 1 - 1/r. Radii are read off the zero
level along rays in one quadrant (the grid mirrors through both axes).

    python demos/circle_oracles.py --h 0.1
"""
import argparse
import math
import os

import numpy as np
from scipy.integrate import solve_ivp
from scipy.ndimage import map_coordinates

os.environ.setdefault("FORCEDMCF_TEST_MODE", "1")   # curvature-only runs are a solver test

from forcedmcf import ConstantField, Grid2D, InitialSet, evolve_until, init_state


def radius(u, h, rays=48):
    rr = np.arange(0.0, (min(u.shape) - 1) * h, h / 4)
    out = []
    for a in np.linspace(0, math.pi / 2, rays):
        v = map_coordinates(u, [rr * math.cos(a) / h, rr * math.sin(a) / h], order=1)
        k = int(np.argmax(v < 0))
        out.append(rr[k - 1] + (h / 4) * v[k - 1] / (v[k - 1] - v[k]))
    return float(np.mean(out))


def quadrant(h, L):
    n = int(round(L / h)) + 1
    return Grid2D(h=h, nx=n, ny=n, sides=("reflect", "extrapolation", "reflect", "extrapolation"))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--h", type=float, default=0.1)
    args = ap.parse_args()
    h = args.h

    print("shrinking disc, forcing off")
    st = init_state(quadrant(h, 3.0), InitialSet.disc((0, 0), 2.0))
    for T in (0.25, 0.5, 1.0, 1.5, 1.8, 1.9):
        evolve_until(st, None, until_time=T)
        ex = math.sqrt(4 - 2 * T)
        r = radius(st.u, h)
        print(f"  t={T:4.2f}  r={r:.4f}  exact={ex:.4f}  rel={(r - ex) / ex:+.4f}  r/h={ex / h:5.1f}")

    print("expanding disc, c = 1")
    ode = solve_ivp(lambda t, r: 1 - 1 / r, (0, 15), [2.0], rtol=1e-10, dense_output=True)
    st = init_state(quadrant(h, 11.0), InitialSet.disc((0, 0), 2.0))
    f = ConstantField(1.0)
    for T in (1.0, 3.0, 6.0, 9.0, 11.0):
        evolve_until(st, f, until_time=T)
        ex = float(ode.sol(T)[0])
        r = radius(st.u, h)
        print(f"  t={T:4.1f}  r={r:.4f}  ode={ex:.4f}  rel={(r - ex) / ex:+.4f}")


if __name__ == "__main__":
    main()
