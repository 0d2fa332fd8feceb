"""Independent reference computations shared by the tests.

Nothing here imports the solver internals, so agreement with them means
something.
"""
import math

import numpy as np
from scipy.ndimage import map_coordinates

MASK64 = (1 << 64) - 1


def splitmix_absorb(h, v):
    # SplitMix64 finalizer applied to (h xor v) + golden gamma
    z = ((h ^ (v & MASK64)) + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def key(seed, cx, cy, idx):
    h = 0
    for v in (seed, cx, cy, idx):
        h = splitmix_absorb(h, v)
    return h


def uniform(seed, cx, cy, idx):
    return (key(seed, cx, cy, idx) >> 11) / 2.0 ** 53


def poisson_inverse(u, lam, cap=64):
    if lam <= 0:
        return 0
    k, p = 0, math.exp(-lam)
    F = p
    while u > F and k < cap:
        k += 1
        p *= lam / k
        F += p
    return k


def bumps(seed, cx, cy, lam, a_lo, a_hi, period=0):
    cyk = cy % period if period else cy
    n = poisson_inverse(uniform(seed, cx, cyk, 0), lam)
    out = []
    for p in range(n):
        out.append((cx + uniform(seed, cx, cyk, 3 * p + 1),
                    cy + uniform(seed, cx, cyk, 3 * p + 2),
                    a_lo + (a_hi - a_lo) * uniform(seed, cx, cyk, 3 * p + 3)))
    return out


def smoothstep_bump(s):
    return 0.0 if s >= 1 else 1 - 3 * s * s + 2 * s ** 3


def soft_cap(v, span):
    knee = 0.9 * span
    if span <= 0:
        return 0.0
    if v <= knee:
        return v
    w = span - knee
    return knee + w * (1 - math.exp(-(v - knee) / w))


def bump_field(x, y, seed, lam=1.0, r=0.4, a_lo=0.5, a_hi=1.0, c_min=1.0, c_max=2.0, period=0):
    """Pointwise reference evaluation of the max-of-bumps medium."""
    best = 0.0
    for cx in range(math.floor(x) - 1, math.floor(x) + 2):
        for cy in range(math.floor(y) - 1, math.floor(y) + 2):
            for px, py, a in bumps(seed, cx, cy, lam, a_lo, a_hi, period):
                d = math.hypot(x - px, y - py)
                best = max(best, a * smoothstep_bump(d / r))
    return c_min + soft_cap(best, c_max - c_min)


# ------------------------------------------------------------------ ODEs

def rk4(f, y0, t0, t1, n):
    y, t = float(y0), float(t0)
    dt = (t1 - t0) / n
    for _ in range(n):
        k1 = f(t, y)
        k2 = f(t + dt / 2, y + dt * k1 / 2)
        k3 = f(t + dt / 2, y + dt * k2 / 2)
        k4 = f(t + dt, y + dt * k3)
        y += dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        t += dt
    return y


def disc_radius_at(t, r0, c, n=2000):
    """Radius of a disc moving by dr/dt = c - 1/r."""
    return rk4(lambda s, r: c - 1.0 / r, r0, 0.0, t, max(1, int(n * t / 10) + 1))


def disc_arrival(r0, rho, c, n=4000):
    """Time for that disc to grow from r0 to r0 + rho (dt/dr = 1/(c - 1/r))."""
    return rk4(lambda r, t: 1.0 / (c - 1.0 / r), 0.0, r0, r0 + rho, n)


# -------------------------------------------------------------- geometry

def ray_radius(u, h, origin_index=(0, 0), n_rays=48, quadrant=True):
    """Mean distance from a node to the zero crossing of u along rays."""
    i0, j0 = origin_index
    top = math.pi / 2 if quadrant else 2 * math.pi
    out = []
    rmax = (min(u.shape) - 1 - max(i0, j0)) * h if quadrant else (min(u.shape) // 2 - 1) * h
    rr = np.arange(0.0, rmax, h / 4)
    for a in np.linspace(0.0, top, n_rays, endpoint=not quadrant):
        v = map_coordinates(u, [i0 + rr * math.cos(a) / h, j0 + rr * math.sin(a) / h], order=1)
        k = int(np.argmax(v < 0))
        if k == 0:
            raise ValueError("no sign change along ray")
        out.append(rr[k - 1] + (h / 4) * v[k - 1] / (v[k - 1] - v[k]))
    return float(np.mean(out))


def brute_directed(A, B, P):
    """sup over A of min distance to B, by all pairs. P: (nx, ny, 2) node positions."""
    a = P[A]
    b = P[B]
    best = 0.0
    for k in range(0, len(a), 256):
        d = np.sqrt(((a[k:k + 256, None, :] - b[None, :, :]) ** 2).sum(-1)).min(axis=1)
        best = max(best, float(d.max()))
    return best


def brute_hausdorff(A, B, P):
    return max(brute_directed(A, B, P), brute_directed(B, A, P))


def brute_distance(mask, P):
    pts = P[mask]
    flat = P.reshape(-1, 2)
    d = np.sqrt(((flat[:, None, :] - pts[None, :, :]) ** 2).sum(-1)).min(axis=1)
    return d.reshape(mask.shape)
