"""Multi-seed Monte Carlo harness for flat fronts in random media.

One task = one medium seed and one direction e. A task launches a front
from the half-space {x.e <= 0}, records m(t e) at the probe distances
and, when asked, the front width across the window at given times.
Aggregation always runs over tasks in sorted (direction, seed) order, so
results do not depend on how tasks were scheduled.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dfield, replace
import multiprocessing as mp

import numpy as np
from scipy.optimize import brentq

from .arrival import filling_time
from .coeff_field import FieldSpec, sample_field
from .grid import GridSet, front_grid
from .levelset import InitialSet, SolverError, HorizonExceeded, Window, evolve_until, init_state


@dataclass
class ExperimentPlan:
    spec: FieldSpec = dfield(default_factory=FieldSpec)
    directions: list = dfield(default_factory=lambda: [(1.0, 0.0)])
    times: list = dfield(default_factory=lambda: [10.0, 20.0, 40.0, 80.0])
    n_seeds: int = 8
    h: float = 0.1
    width: float = 40.0
    master_seed: int = 0
    periodic: bool = True
    flat_times: list = dfield(default_factory=list)
    flat_seeds: int | None = None   # only the first seeds run on to the flatness horizon
    back: float = 3.0
    output: str | None = None
    medium: object = None           # fixed deterministic field; None samples spec per seed

    def __post_init__(self):
        self.times = [float(t) for t in self.times]
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")
        if self.n_seeds < 2:
            raise ValueError("need at least two seeds for variance estimates")
        for t in self.times:
            if abs(t / self.h - round(t / self.h)) > 1e-9:
                raise ValueError("probe distances must be multiples of h")

    def seeds(self):
        return derive_seeds(self.master_seed, self.n_seeds)


def derive_seeds(master, n):
    """n 64-bit medium seeds derived deterministically from a master seed."""
    ss = np.random.SeedSequence(int(master))
    return [int(s) for s in ss.generate_state(n, dtype=np.uint64)]


# ----------------------------------------------------------------- tasks

def front_position(m, grid, t, back):
    """Per-column position x.e of the furthest node reached by time t,
    interpolated linearly in m toward the next node."""
    reached = m <= t
    nx = m.shape[0]
    k = nx - 1 - np.argmax(reached[::-1], axis=0)
    k = np.where(reached.any(axis=0), k, -1)
    cols = np.arange(m.shape[1])
    kk = np.clip(k, 0, nx - 1)
    k1 = np.clip(k + 1, 0, nx - 1)
    mk = m[kk, cols]
    mk1 = m[k1, cols]
    frac = np.where((k + 1 < nx) & np.isfinite(mk1) & (mk1 > mk), (t - mk) / (mk1 - mk), 0.0)
    s = -back + grid.h * (kk + np.clip(frac, 0.0, 1.0))
    return np.where(k >= 0, s, np.nan)


def run_front_task(task):
    """Worker: evolve one front and return probe arrival times and widths."""
    spec, seed, e, h, width, times, periodic, flat_times, back, medium = task
    e = np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    if periodic:
        if not np.allclose(e, (1.0, 0.0)):
            raise ValueError("periodic windows are only set up for e = (1, 0)")
        spec = replace(spec, transverse_period=width)
    field = sample_field(spec, seed) if medium is None else medium
    far = max(max(times), spec.c_max * max(flat_times) if flat_times else 0.0)
    g = front_grid((float(e[0]), float(e[1])), h, far + 4.0, width, back=back, periodic=periodic)
    st = init_state(g, InitialSet.half_space(tuple(e)), window=Window())
    probes = np.array([t * e for t in times])
    t_cap = 4.0 * max(times) / spec.c_min + 10.0
    t0 = time.perf_counter()
    out = {"seed": int(seed), "direction": [float(e[0]), float(e[1])], "ok": True}
    try:
        evolve_until(st, field, probes=probes, t_max=t_cap)
        if flat_times and st.t < max(flat_times):
            evolve_until(st, field, until_time=max(flat_times))
    except (SolverError, HorizonExceeded) as err:
        out.update(ok=False, error=str(err))
    idx = [g.nearest_node(p) for p in probes]
    out["m"] = [float(st.m[i, j]) for i, j in idx]
    if flat_times:
        W = []
        for t in flat_times:
            s = front_position(st.m, g, t, back)
            W.append(float(np.nanmax(s) - np.nanmin(s)) if st.t >= t else math.nan)
        out["W"] = W
    out["steps"] = st.steps
    out["wall"] = time.perf_counter() - t0
    return out


def map_tasks(fn, tasks, jobs=1):
    """Apply ``fn`` to tasks, in order; a spawn-based pool when jobs > 1."""
    if jobs is None or jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs, mp_context=mp.get_context("spawn")) as ex:
        return list(ex.map(fn, tasks))


def collect_samples(plan: ExperimentPlan, e, jobs=1, with_width=False):
    """Run every seed for direction e; returns (seeds, m matrix, W matrix, results)."""
    seeds = plan.seeds()
    tasks = []
    for k, s in enumerate(seeds):
        ft = list(plan.flat_times) if with_width and (plan.flat_seeds is None or k < plan.flat_seeds) else []
        tasks.append((plan.spec, s, tuple(e), plan.h, plan.width, tuple(plan.times),
                      plan.periodic, tuple(ft), plan.back, plan.medium))
    res = map_tasks(run_front_task, tasks, jobs)
    M = np.array([r["m"] for r in res])
    W = None
    if with_width and plan.flat_times:
        W = np.array([r["W"] if "W" in r else [math.nan] * len(plan.flat_times) for r in res])
    return seeds, M, W, res


# ---------------------------------------------------------------- speed

@dataclass
class SpeedEstimate:
    direction: tuple
    times: list
    seeds: list
    samples: np.ndarray          # (n_seeds, n_times), NaN for failed seeds
    mu: np.ndarray
    sigma: np.ndarray
    c_bar: float
    ci: tuple
    c_bar_std: float
    failures: list

    def to_dict(self):
        return {"direction": list(self.direction), "times": list(self.times),
                "mu": self.mu.tolist(), "sigma": self.sigma.tolist(), "c_bar": self.c_bar,
                "ci": list(self.ci), "c_bar_std": self.c_bar_std, "failures": self.failures,
                "n_seeds": len(self.seeds)}

    def raw_rows(self):
        for k, s in enumerate(self.seeds):
            for q, t in enumerate(self.times):
                yield (self.direction[0], self.direction[1], t, s, self.samples[k, q])


def bootstrap(stat, data, n_boot=1000, seed=0):
    """Bootstrap replicates of ``stat`` over rows of ``data``."""
    rng = np.random.default_rng(seed)
    n = len(data)
    reps = np.empty(n_boot)
    for b in range(n_boot):
        reps[b] = stat(data[rng.integers(0, n, n)])
    return reps


def speed_estimate(e, times, seeds, M, failures=(), n_boot=1000, boot_seed=0):
    good = np.all(np.isfinite(M), axis=1)
    G = M[good]
    mu = G.mean(axis=0)
    sigma = G.std(axis=0, ddof=1) if len(G) > 1 else np.zeros(len(times))
    tstar = times[-1]
    c_bar = tstar / mu[-1]
    reps = bootstrap(lambda d: tstar / d[:, -1].mean(), G, n_boot, boot_seed)
    ci = (float(np.percentile(reps, 2.5)), float(np.percentile(reps, 97.5)))
    return SpeedEstimate(tuple(map(float, e)), list(times), list(seeds), M, mu, sigma,
                         float(c_bar), ci, float(reps.std(ddof=1)), list(failures))


def run_speed_experiment(plan: ExperimentPlan, e, jobs=1) -> SpeedEstimate:
    """Sample m(t e) over seeds and estimate the effective speed t*/mu(t*)."""
    seeds, M, _, res = collect_samples(plan, e, jobs)
    failures = [r["seed"] for r in res if not r["ok"] or not np.all(np.isfinite(r["m"]))]
    if len(failures) > 0.2 * len(seeds):
        raise SolverError(f"{len(failures)} of {len(seeds)} seeds failed")
    return speed_estimate(e, plan.times, seeds, M, failures)


def speed_convergence(est: SpeedEstimate):
    """|t/mu(t) - 2t/mu(2t)| for every probe t whose double is also probed."""
    out = {}
    T = est.times
    for a, t in enumerate(T):
        if 2 * t in T:
            b = T.index(2 * t)
            out[t] = abs(t / est.mu[a] - 2 * t / est.mu[b])
    return out


# ---------------------------------------------------------- fluctuations

@dataclass
class FluctuationStats:
    times: list
    sigma: np.ndarray
    beta: float
    amplitude: float
    r2: float
    residuals: list
    fit_times: list
    tail_counts: dict
    tail_envelope: dict
    tail_C: dict
    degenerate: bool
    n: int

    def tails_ok(self):
        return all(self.tail_counts[t][lam] <= self.tail_envelope[t][lam] + 1e-12
                   for t in self.tail_counts for lam in (2, 3))

    def to_dict(self):
        return {"times": self.times, "sigma": self.sigma.tolist(), "beta": self.beta,
                "amplitude": self.amplitude, "r2": self.r2, "residuals": self.residuals,
                "fit_times": self.fit_times,
                "tail_counts": {str(t): {str(k): v for k, v in d.items()} for t, d in self.tail_counts.items()},
                "tail_envelope": {str(t): {str(k): v for k, v in d.items()} for t, d in self.tail_envelope.items()},
                "tail_C": {str(t): v for t, v in self.tail_C.items()},
                "degenerate": self.degenerate, "n": self.n, "tails_ok": self.tails_ok()}


def fit_power_law(t, y):
    """OLS of log y on log t: returns (beta, A, R^2, residuals)."""
    x, z = np.log(t), np.log(y)
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, z, rcond=None)
    res = z - X @ coef
    ss = float(np.sum((z - z.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res ** 2)) / ss if ss > 0 else 1.0
    return float(coef[1]), float(math.exp(coef[0])), r2, res.tolist()


def gaussian_envelope_constant(p1, n):
    """C with C exp(-1/C) = max(p1, 1/n): the envelope calibrated at lambda = 1."""
    target = max(p1, 1.0 / n)
    return brentq(lambda C: C * math.exp(-1.0 / C) - target, 1e-6, 1e6)


def fluctuation_stats(times, M) -> FluctuationStats:
    G = M[np.all(np.isfinite(M), axis=1)]
    n = len(G)
    times = list(times)
    mu = G.mean(axis=0)
    sigma = G.std(axis=0, ddof=1)
    degenerate = bool(np.any(sigma <= 1e-12 * np.maximum(mu, 1.0)))
    T = np.asarray(times)
    fit = T >= T.max() / 10.0
    if degenerate or fit.sum() < 2:
        beta, A, r2, res = math.nan, math.nan, math.nan, []
    else:
        beta, A, r2, res = fit_power_law(T[fit], sigma[fit])
    counts, env, Cs = {}, {}, {}
    for q, t in enumerate(times):
        dev = np.abs(G[:, q] - mu[q]) / math.sqrt(t)
        c = {lam: int(np.sum(dev > lam)) for lam in (1, 2, 3)}
        C = gaussian_envelope_constant(c[1] / n, n)
        counts[t] = c
        Cs[t] = C
        env[t] = {lam: n * C * math.exp(-lam * lam / C) for lam in (1, 2, 3)}
    return FluctuationStats(times, sigma, beta, A, r2, res, T[fit].tolist(), counts, env, Cs,
                            degenerate, n)


def run_fluctuation_experiment(plan: ExperimentPlan, e, jobs=1):
    if plan.n_seeds < 64:
        raise ValueError("fluctuation statistics need at least 64 seeds")
    seeds, M, _, _ = collect_samples(plan, e, jobs)
    return fluctuation_stats(plan.times, M)


# ------------------------------------------------------------- linearity

def linearity_defect(mu_by_t, t, s):
    """Delta(t, s) = |mu(t) + mu(s) - mu(t + s)|, with mu(0) = 0."""
    if s == 0 or t == 0:
        return 0.0
    return abs(mu_by_t[t] + mu_by_t[s] - mu_by_t[t + s])


def linearity_report(times, M, t_small, t_large, n_boot=1000, seed=0):
    """Delta(T,T)/T^(2/3) at T = t_large against twice its value at t_small,
    with a bootstrap allowance of 1.96 standard deviations."""
    times = list(times)
    G = M[np.all(np.isfinite(M), axis=1)]

    def stat(D):
        mu = dict(zip(times, D.mean(axis=0)))
        a = linearity_defect(mu, t_large, t_large) / t_large ** (2 / 3)
        b = linearity_defect(mu, t_small, t_small) / t_small ** (2 / 3)
        return a - 2 * b

    mu = dict(zip(times, G.mean(axis=0)))
    val = stat(G)
    eps = 1.96 * float(bootstrap(stat, G, n_boot, seed).std(ddof=1))
    rows = {t: linearity_defect(mu, t, t) / t ** (2 / 3) for t in times if 2 * t in times}
    return {"normalized_defect": rows, "statistic": val, "eps_stat": eps,
            "passed": bool(val <= eps)}


def check_approximate_linearity(plan: ExperimentPlan, e, jobs=1, t_small=None, t_large=None):
    seeds, M, _, _ = collect_samples(plan, e, jobs)
    doubles = [t for t in plan.times if 2 * t in plan.times]
    if not doubles:
        raise ValueError("times must contain pairs (t, 2t)")
    t_small = doubles[0] if t_small is None else t_small
    t_large = doubles[-1] if t_large is None else t_large
    return linearity_report(plan.times, M, t_small, t_large)


# ------------------------------------------------------------ directions

@dataclass
class DirectionProfile:
    angles: list
    estimates: list
    stds: list
    increments: list            # (k, l, |e_k - e_l|, |c_k - c_l|)
    fitted_C: float
    near_pair: tuple | None
    near_increment: float | None
    near_bound: float | None
    spread: float
    mc_std: float

    def to_dict(self):
        return {"angles": self.angles, "estimates": self.estimates, "stds": self.stds,
                "increments": [list(r) for r in self.increments], "fitted_C": self.fitted_C,
                "near_pair": list(self.near_pair) if self.near_pair else None,
                "near_increment": self.near_increment, "near_bound": self.near_bound,
                "spread": self.spread, "mc_std": self.mc_std,
                "near_ok": self.near_ok(), "spread_ok": self.spread_ok()}

    def near_ok(self):
        return self.near_increment is None or self.near_increment <= self.near_bound + 1e-12

    def spread_ok(self):
        return self.spread <= 2 * self.mc_std + 1e-12


def direction_angles(n=8, near_gap=1e-2, anchor=None):
    """n angles k*pi/(2n) over a quarter circle plus a partner of ``anchor``
    at chord distance ``near_gap``."""
    th = [k * math.pi / (2 * n) for k in range(n)]
    if near_gap:
        a = th[n // 2] if anchor is None else anchor
        th.append(a + 2 * math.asin(near_gap / 2))
    return th


def profile_from_estimates(angles, ests, n_main, sep=0.1):
    """Log-modulus envelope: C fitted as max |dc| |log|e1 - e2|| over
    pairs at chord distance >= sep, then applied to the near pair."""
    cs = [e.c_bar for e in ests]
    sd = [e.c_bar_std for e in ests]
    E = [np.array([math.cos(a), math.sin(a)]) for a in angles]
    inc = []
    for k in range(len(angles)):
        for l in range(k + 1, len(angles)):
            inc.append((k, l, float(np.linalg.norm(E[k] - E[l])), abs(cs[k] - cs[l])))
    far = [(d, dc) for k, l, d, dc in inc if d >= sep]
    C = max((dc * abs(math.log(d)) for d, dc in far), default=0.0)
    near = None
    ninc = nb = None
    if len(angles) > n_main:
        k = int(np.argmin([abs(a - angles[-1]) for a in angles[:n_main]]))
        d = float(np.linalg.norm(E[k] - E[-1]))
        near = (k, len(angles) - 1)
        ninc = abs(cs[k] - cs[-1])
        nb = C / abs(math.log(d))
    main = cs[:n_main]
    spread = max(main) - min(main)
    mc_std = float(np.sqrt(np.mean(np.square(sd[:n_main]))))
    return DirectionProfile(list(angles), cs, sd, inc, C, near, ninc, nb, spread, mc_std)


def run_direction_profile(plan: ExperimentPlan, n_dirs=8, near_gap=1e-2, jobs=1):
    """Effective speed c_bar(e(theta)) on non-periodic rotated windows with
    common seeds across directions."""
    if n_dirs < 8:
        raise ValueError("need at least 8 directions")
    plan = replace(plan, periodic=False)
    angles = direction_angles(n_dirs, near_gap)
    seeds = plan.seeds()
    tasks = []
    for a in angles:
        e = (math.cos(a), math.sin(a))
        for s in seeds:
            tasks.append((plan.spec, s, e, plan.h, plan.width, tuple(plan.times), False, (),
                          plan.back, plan.medium))
    res = map_tasks(run_front_task, tasks, jobs)
    ests = []
    for q, a in enumerate(angles):
        chunk = res[q * len(seeds):(q + 1) * len(seeds)]
        M = np.array([r["m"] for r in chunk])
        ests.append(speed_estimate((math.cos(a), math.sin(a)), plan.times, seeds, M,
                                   boot_seed=0))
    return profile_from_estimates(angles, ests, n_dirs), ests


# -------------------------------------------------------------- flatness

def flatness_report(flat_times, W):
    """Median over seeds of W(t)/t: must decrease and end at most 0.1."""
    ratios = np.nanmedian(W / np.asarray(flat_times)[None, :], axis=0)
    dec = bool(np.all(np.diff(ratios) < 0))
    return {"times": list(flat_times), "median_ratio": ratios.tolist(),
            "decreasing": dec, "final_ok": bool(ratios[-1] <= 0.1),
            "passed": bool(dec and ratios[-1] <= 0.1)}


def run_flatness_check(plan: ExperimentPlan, e=(1.0, 0.0), jobs=1):
    if not plan.flat_times:
        raise ValueError("plan.flat_times is empty")
    seeds, M, W, _ = collect_samples(plan, e, jobs, with_width=True)
    return flatness_report(plan.flat_times, W)


# ---------------------------------------------------------- localization

def check_ordered_localization(plan: ExperimentPlan, e=(1.0, 0.0), R=15.0, shrink=None,
                               back_shift=1.0, bulge=2.0, horizon=12.0, n=1, R0=2.0,
                               seed_index=0, field=None):
    """Two sources ordered only inside B_R: S2 = {x.e <= -back_shift} in B_R
    but {x.e <= bulge} outside, S1 = {x.e <= 0}. Returns the smallest C2
    with {m2 <= s - C2 n} inside {m1 <= s} on B_(R - shrink) for all s up
    to the horizon, i.e. max (m1 - m2)_+ / n there."""
    from .arrival import compute_arrival
    shrink = R / 2 if shrink is None else shrink
    spec = plan.spec
    if field is None:
        field = plan.medium if plan.medium is not None else sample_field(spec, plan.seeds()[seed_index])
    g = front_grid(e, plan.h, spec.c_max * horizon + 4.0, plan.width, back=plan.back + bulge,
                   periodic=False)
    X, Y = g.coords()
    ev = np.asarray(e, dtype=float)
    s = X * ev[0] + Y * ev[1]
    r = np.hypot(X, Y)
    S1 = InitialSet.half_space(tuple(ev))
    S2 = InitialSet.from_mask(GridSet(np.where(r < R, s <= -back_shift, s <= bulge), g), R0=R0)
    m1 = compute_arrival(field, S1, g, horizon, check_regularity=False)
    m2 = compute_arrival(field, S2, g, horizon, window=Window(back=plan.back + bulge + 1.0),
                         check_regularity=False)
    win = r <= R - shrink
    # where m1 = 0 containment is automatic; leaving those nodes out keeps max_gap informative
    sel = win & (m2.m <= horizon) & (m1.m > 0)
    gap = np.where(sel, np.minimum(m1.m, horizon) - m2.m, -np.inf)
    g_star = max(float(gap.max()) if sel.any() else 0.0, 0.0)
    tau = filling_time(R0, spec.c_min)
    C2 = g_star / n
    max_gap = float(gap.max()) if sel.any() else -math.inf
    return {"C2": C2, "max_gap": max_gap, "bound": 1 + 3 * tau, "passed": bool(C2 <= 1 + 3 * tau),
            "R": R, "shrink": shrink, "n": n, "horizon": horizon, "window_nodes": int(sel.sum())}
