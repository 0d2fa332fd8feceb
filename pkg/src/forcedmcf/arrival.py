"""Arrival times m(x, S) extracted from the level-set flow, sublevel-set
utilities and the regularity checks run by ``verify``.

Checks compare horizon-capped values min(m, H): a node not reached by the
horizon H only tells us m >= H, and every bound used here is stable under
capping both sides.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dfield, replace

import numpy as np

from .coeff_field import ConstantField, FieldSpec, sample_field, splice_fields
from .grid import Grid2D, GridSet, distance_to, front_grid, hausdorff
from .levelset import InitialSet, SolverError, Window, evolve_until, init_state


@dataclass
class ArrivalTimeField:
    m: np.ndarray
    grid: Grid2D
    source: InitialSet
    field_id: dict
    horizon: float
    dt: float
    meta: dict = dfield(default_factory=dict)

    def at(self, x):
        i, j = self.grid.nearest_node(x)
        return float(self.m[i, j])

    def capped(self, H=None):
        H = self.horizon if H is None else H
        return np.minimum(self.m, H)

    @property
    def source_mask(self):
        return self.m == 0.0

    def rows(self):
        X, Y = self.grid.coords()
        return X.ravel(), Y.ravel(), self.m.ravel()

    def write_csv(self, path):
        X, Y, m = self.rows()
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("x,y,m\n")
            for a, b, c in zip(X, Y, m):
                f.write(f"{a!r},{b!r},{'inf' if c == np.inf else repr(float(c))}\n")


class ArrivalError(SolverError):
    """Solver failure during an arrival computation; ``partial`` holds m so far."""

    def __init__(self, msg, partial):
        super().__init__(msg)
        self.partial = partial


def compute_arrival(field, S: InitialSet, grid: Grid2D, T_max, window="auto",
                    check_regularity=True, reinit_every=50) -> ArrivalTimeField:
    """First-crossing times of u(., t) through 0 up to ``T_max``.

    ``field=None`` runs without forcing (solver oracle tests only).
    """
    if check_regularity and field is not None:
        S.check_regularity(field.c_min)
    if window == "auto":
        window = Window() if S.kind == "half-space" else None
    st = init_state(grid, S, window=window, reinit_every=reinit_every)
    c_max = field.c_max if field is not None else 0.0
    dt = st.dt(c_max)
    fid = field.describe() if field is not None else {"kind": "disabled"}
    try:
        evolve_until(st, field, until_time=T_max)
    except SolverError as err:
        part = ArrivalTimeField(st.m.copy(), grid, S, fid, st.t, dt)
        raise ArrivalError(str(err), part) from err
    meta = {"steps": st.steps, "reinit_count": st.reinit_count}
    return ArrivalTimeField(st.m, grid, S, fid, float(T_max), dt, meta)


def sublevel_set(m: ArrivalTimeField, t) -> GridSet:
    if t < 0:
        raise ValueError("sublevel time must be nonnegative")
    return GridSet(m.m <= t, m.grid)


def regularize_set(S: GridSet, R0) -> GridSet:
    """Closing-type regularization: erode by 1 the dilation of S by R0 + 1."""
    if S.empty:
        raise ValueError("cannot regularize an empty set")
    return S.dilate(R0 + 1.0).erode(1.0)


# ------------------------------------------------------------- reports

@dataclass
class RegularityReport:
    check: str
    constants: dict
    max_violation: float
    location: list | None
    tolerance: float
    details: dict = dfield(default_factory=dict)
    passed: bool = dfield(init=False)

    def __post_init__(self):
        self.max_violation = float(self.max_violation)
        self.passed = bool(self.max_violation <= self.tolerance)

    def to_dict(self):
        return {"check": self.check, "constants": self.constants,
                "max_violation": _jsonable(self.max_violation),
                "location": self.location, "pass": self.passed,
                "tolerance": self.tolerance, "details": _jsonable(self.details)}


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf") if not math.isnan(v) else "nan"
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_reports(reports, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump([r.to_dict() for r in reports], f, indent=2, sort_keys=True)
        f.write("\n")


def filling_time(R0, c_min):
    """Waiting time after which a ball of radius R0 around a reached point is covered."""
    return 13.0 * R0 / (2.0 * c_min)


def _loc(grid, idx):
    return [float(v) for v in grid.node_position(*idx)]


def _pairs(grid, n, rng, min_sep):
    """Seeded random node pairs at physical distance >= min_sep."""
    nx, ny = grid.shape
    out_a, out_b = [], []
    need = n
    while need > 0:
        k = 2 * need + 16
        a = np.stack([rng.integers(0, nx, k), rng.integers(0, ny, k)], 1)
        b = np.stack([rng.integers(0, nx, k), rng.integers(0, ny, k)], 1)
        d = _pair_dist(grid, a, b)
        ok = d >= min_sep
        out_a.append(a[ok][:need])
        out_b.append(b[ok][:need])
        need -= int(min(ok.sum(), need))
    return np.concatenate(out_a), np.concatenate(out_b)


def _pair_dist(grid, a, b):
    di = (a[:, 0] - b[:, 0]).astype(float)
    dj = (a[:, 1] - b[:, 1]).astype(float)
    if grid.periodic:
        dj = np.abs(dj)
        dj = np.minimum(dj, grid.ny - dj)
    return grid.h * np.hypot(di, dj)


def check_small_scale_lipschitz(m: ArrivalTimeField, c_min, L0, t_cap=None):
    """|m(x) - m(y)| <= (2/c_min) exp(L0 min(m(x), m(y))) |x - y| on neighbour pairs.

    The violation of a pair is |dm|/slope - |x - y| (a length); the grid
    allowance is 2h. Pairs are adjacent and diagonal node pairs with both
    times finite and at most ``t_cap``.
    """
    t_cap = m.horizon if t_cap is None else t_cap
    g = m.grid
    M = np.where(m.m <= t_cap, m.m, np.inf)
    worst, loc, fit = -np.inf, None, 0.0
    shifts = [(1, 0), (0, 1), (1, 1), (1, -1)]
    for di, dj in shifts:
        A = M[:g.nx - di] if di else M
        B = M[di:] if di else M
        if dj == 1:
            A, B = A[:, :-1], B[:, 1:]
        elif dj == -1:
            A, B = A[:, 1:], B[:, :-1]
        dist = g.h * math.hypot(di, dj)
        ok = np.isfinite(A) & np.isfinite(B)
        if not ok.any():
            continue
        A = np.where(ok, A, 0.0)
        B = np.where(ok, B, 0.0)
        dm = np.abs(A - B)
        slope = (2.0 / c_min) * np.exp(L0 * np.minimum(A, B))
        v = np.where(ok, dm / slope - dist, -np.inf)
        k = np.unravel_index(np.argmax(v), v.shape)
        if v[k] > worst:
            worst = float(v[k])
            loc = _loc(g, (k[0], k[1] + (1 if dj == -1 else 0)))
        fit = max(fit, float(np.max(np.where(ok, dm, 0.0))) / dist)
    return RegularityReport("small_scale_lipschitz",
                            {"c_min": c_min, "L0": L0, "t_cap": t_cap},
                            worst, loc, 2 * g.h, {"max_difference_quotient": fit})


def fit_large_scale(m: ArrivalTimeField, n_pairs=20000, seed=0, min_sep=1.0, far=10.0, H=None):
    """Empirical minimal (tau_hat, L_hat): slope from pairs at distance >= far,
    intercept from all sampled pairs."""
    rng = np.random.default_rng(seed)
    a, b = _pairs(m.grid, n_pairs, rng, min_sep)
    M = m.capped(H)
    dm = np.abs(M[a[:, 0], a[:, 1]] - M[b[:, 0], b[:, 1]])
    d = _pair_dist(m.grid, a, b)
    farp = d >= far
    L_hat = float(np.max(dm[farp] / d[farp])) if farp.any() else float(np.max(dm / d))
    tau_hat = float(np.max(np.maximum(dm - L_hat * d, 0.0)))
    return tau_hat, L_hat, (a, b, dm, d)


def check_large_scale_lipschitz(m: ArrivalTimeField, tau, L, n_pairs=20000, seed=0,
                                reference: ArrivalTimeField | None = None):
    """|m(x) - m(y)| <= tau + L |x - y| over seeded pairs at distance >= 1.

    With ``reference`` (the same medium law on a wider window), the fitted
    constants of both runs are compared: L_hat within 20% and tau_hat within
    0.2*tau. The outcome is recorded under details["stability"].
    """
    tau_hat, L_hat, (a, b, dm, d) = fit_large_scale(m, n_pairs, seed)
    v = dm - (tau + L * d)
    k = int(np.argmax(v))
    details = {"tau_hat": tau_hat, "L_hat": L_hat, "pairs": int(len(d))}
    if reference is not None:
        t2, L2, _ = fit_large_scale(reference, n_pairs, seed + 1)
        rel_L = abs(L_hat - L2) / max(L_hat, L2, 1e-300)
        details["stability"] = {"tau_hat_ref": t2, "L_hat_ref": L2, "rel_L": rel_L,
                                "tau_diff": abs(tau_hat - t2),
                                "passed": bool(rel_L <= 0.2 and abs(tau_hat - t2) <= 0.2 * tau)}
    return RegularityReport("large_scale_lipschitz", {"tau": tau, "L": L},
                            float(v[k]), [_loc(m.grid, a[k]), _loc(m.grid, b[k])],
                            2 * m.grid.h * L, details)


def check_filling_time(m: ArrivalTimeField, R0, c_min, n_samples=200, seed=0):
    """Every node of B(x0, R0 - h) is reached within tau = 13 R0/(2 c_min) of m(x0).

    Centres x0 are sampled among nodes with m(x0) <= horizon - tau, so the
    whole waiting window lies inside the run.
    """
    tau = filling_time(R0, c_min)
    g = m.grid
    cand = np.argwhere(m.m <= m.horizon - tau)
    if len(cand) == 0:
        raise ValueError("horizon too short for the filling-time check")
    rng = np.random.default_rng(seed)
    pick = cand[rng.choice(len(cand), size=min(n_samples, len(cand)), replace=False)]
    rad = R0 - g.h
    k = int(math.ceil(rad / g.h))
    di, dj = np.mgrid[-k:k + 1, -k:k + 1]
    inball = g.h * np.hypot(di, dj) <= rad + 1e-9 * g.h
    di, dj = di[inball], dj[inball]
    worst, loc, fill = -np.inf, None, 0.0
    for i, j in pick:
        ii = i + di
        jj = j + dj
        if g.periodic:
            jj = jj % g.ny
            ok = (ii >= 0) & (ii < g.nx)
        else:
            ok = (ii >= 0) & (ii < g.nx) & (jj >= 0) & (jj < g.ny)
        wait = m.m[ii[ok], jj[ok]] - m.m[i, j]
        w = float(wait.max())
        fill = max(fill, w)
        if w - tau > worst:
            worst = w - tau
            loc = _loc(g, (i, j))
    return RegularityReport("filling_time", {"tau": tau, "R0": R0, "c_min": c_min},
                            worst, loc, 0.0, {"empirical_fill_time": fill,
                                              "samples": int(len(pick)), "collar": g.h})


def check_monotone_growth(m: ArrivalTimeField, tau, L, n_pairs=20, seed=0):
    """S_s dilated by ((t - s) - tau)_+ / L lies inside S_t, up to an h-collar.

    The violation is how far the dilation ball pokes out of S_t: the max
    over nodes y outside S_t of radius - d(y, S_s).
    """
    g = m.grid
    H = m.horizon
    rng = np.random.default_rng(seed)
    worst, loc, rows = -np.inf, None, []
    for q in range(n_pairs):
        s = float(rng.uniform(0.0, H))
        t = float(rng.uniform(s, H))
        if q % 2 == 0 and H > tau:
            # half the pairs are spread wider than tau so the dilation is nontrivial
            s = float(rng.uniform(0.0, H - tau))
            t = float(rng.uniform(s + tau, H))
        rad = max((t - s) - tau, 0.0) / L
        Ss = m.m <= s
        outside = ~(m.m <= t)
        d = distance_to(Ss, g)
        v = np.where(outside, rad - d, -np.inf)
        k = np.unravel_index(np.argmax(v), v.shape)
        rows.append((s, t, rad))
        if v[k] > worst:
            worst = float(v[k])
            loc = _loc(g, k)
    return RegularityReport("monotone_growth", {"tau": tau, "L": L}, worst, loc, g.h,
                            {"pairs": [list(r) for r in rows]})


def fit_time_regularity(m: ArrivalTimeField, c_max, times=None):
    """C2 = max over time pairs of (d_H(S_t, S_s) - 2 c_max |t - s| - h)_+ / |t - s|^(1/2)."""
    H = m.horizon
    if times is None:
        times = np.linspace(0.0, H, 11)
    sets = [GridSet(m.m <= t, m.grid) for t in times]
    C2 = 0.0
    for a in range(len(times)):
        for b in range(a + 1, len(times)):
            gap = times[b] - times[a]
            dh = hausdorff(sets[a], sets[b])
            C2 = max(C2, max(dh - 2 * c_max * gap - m.grid.h, 0.0) / math.sqrt(gap))
    return C2


def check_time_regularity(m: ArrivalTimeField, c_max, refined: ArrivalTimeField | None = None,
                          times=None):
    """Fitted C2 in d_H(S_t, S_s) <= C2 |t - s|^(1/2) + 2 c_max |t - s| + h.

    The check passes when C2 is stable under h -> h/2: each resolution's
    constant is at most twice the other's, up to an absolute floor of h.
    """
    C_a = fit_time_regularity(m, c_max, times)
    details = {"C2": C_a}
    if refined is None:
        return RegularityReport("time_regularity", {"c_max": c_max}, 0.0, None, m.grid.h, details)
    C_b = fit_time_regularity(refined, c_max, times)
    details["C2_refined"] = C_b
    v = max(C_a - 2 * C_b, C_b - 2 * C_a)
    return RegularityReport("time_regularity", {"c_max": c_max}, v, None, m.grid.h, details)


def _set_distance(S1: InitialSet, S2: InitialSet, grid):
    if S1.kind == S2.kind == "half-space" and np.allclose(S1.direction, S2.direction):
        return abs(S1.offset - S2.offset)
    if S1.kind == S2.kind == "disc" and np.allclose(S1.center, S2.center):
        return abs(S1.radius - S2.radius)
    return hausdorff(GridSet(S1.node_mask(grid), grid), GridSet(S2.node_mask(grid), grid))


def check_data_continuity(m1: ArrivalTimeField, m2: ArrivalTimeField, c_min):
    """sup |m(x, S) - m(x, S')| <= (2/c_min) d_H(S, S') + 4h/c_min."""
    g = m1.grid
    dH = _set_distance(m1.source, m2.source, g)
    H = min(m1.horizon, m2.horizon)
    diff = np.abs(m1.capped(H) - m2.capped(H))
    v = diff - (2.0 / c_min) * dH
    k = np.unravel_index(np.argmax(v), v.shape)
    return RegularityReport("data_continuity", {"c_min": c_min, "d_H": dH}, float(v[k]),
                            _loc(g, k), 4 * g.h / c_min, {"max_abs_difference": float(diff[k])})


def check_sublevel_localization(mA: ArrivalTimeField, mB: ArrivalTimeField, t, blend_width):
    """m_A = m_B on {m_A <= t} shrunk by blend_width + 3h; tolerance 2 dt."""
    g = mA.grid
    core = GridSet(mA.m <= t, g).erode(blend_width + 3 * g.h)
    a = np.where(core.mask, mA.m, 0.0)
    b = np.where(core.mask, mB.m, 0.0)
    diff = np.where(core.mask, np.abs(a - b), -np.inf)
    k = np.unravel_index(np.argmax(diff), diff.shape)
    v = float(diff[k]) if core.mask.any() else 0.0
    return RegularityReport("sublevel_localization", {"t": t, "blend_width": blend_width},
                            v, _loc(g, k) if core.mask.any() else None, 2 * mA.dt,
                            {"core_nodes": core.count()})


def check_semigroup(m_full: ArrivalTimeField, m_restart: ArrivalTimeField, t, tau):
    """|m(x, S) - (t + m(x, S~_t))| <= 4 tau on {m > t}, S~_t the regularized sublevel set."""
    H = m_full.horizon
    M = m_full.capped(H)
    R = np.minimum(t + m_restart.m, H)
    sel = m_full.m > t
    diff = np.where(sel, np.abs(M - R), -np.inf)
    k = np.unravel_index(np.argmax(diff), diff.shape)
    return RegularityReport("semigroup", {"t": t, "tau": tau}, float(diff[k]),
                            _loc(m_full.grid, k), 4 * tau, {"nodes": int(sel.sum())})


def check_regularization(m_full: ArrivalTimeField, m_restart: ArrivalTimeField, t, R0, tau, c_min):
    """S_t is contained in S~ = regularize(S_t), d_H(S~, S_t) <= 2 R0 + 2 + 2h, and
    m(x, S~) <= m(x, S_t) <= m(x, S~) + 3 tau with m(x, S_t) = m(x, S) - t.

    Set-level failures count as an infinite violation; the time sandwich
    carries the 4h/c_min grid allowance of the data-continuity check.
    """
    g = m_full.grid
    St = GridSet(m_full.m <= t, g)
    St_reg = GridSet(m_restart.m == 0.0, g)
    dH = hausdorff(St, St_reg)
    contained = St_reg.contains(St)
    set_ok = contained and dH <= 2 * R0 + 2 + 2 * g.h
    H = m_full.horizon
    sel = (m_full.m > t) & (m_full.m <= H)
    a = np.where(sel, np.minimum(m_restart.m, H - t), -np.inf)
    b = np.where(sel, m_full.m - t, np.inf)
    lower = a - b                        # m(x, S~) - m(x, S_t) should be <= 0
    upper = np.where(sel, b - np.minimum(m_restart.m, H - t) - 3 * tau, -np.inf)
    v = np.maximum(lower, upper)
    k = np.unravel_index(np.argmax(v), v.shape)
    worst = float(v[k]) if sel.any() else 0.0
    if not set_ok:
        worst = math.inf
    return RegularityReport("regularization", {"R0": R0, "tau": tau, "t": t},
                            worst, _loc(g, k), 4 * g.h / c_min,
                            {"d_H": dH, "d_H_bound": 2 * R0 + 2 + 2 * g.h, "contained": contained})


# ---------------------------------------------------------- verify suite

STANDARD = dict(c_min=1.0, c_max=2.0, L0=5.0, r=0.4, h=0.1, R0=2.0)


@dataclass
class VerifyConfig:
    spec: FieldSpec = dfield(default_factory=lambda: FieldSpec(
        c_min=1.0, c_max=2.0, lipschitz_bound=5.0, bump_radius=0.4,
        bump_intensity=1.0, amp_lo=0.5, amp_hi=1.0))
    h: float = 0.1
    R0: float = 2.0
    width: float = 40.0
    wide_width: float = 80.0
    horizon: float = 16.0
    small_scale_cap: float = 10.0
    shift: float = 1.0
    localization_time: float = 8.0
    semigroup_time: float = 10.0
    refine_width: float = 10.0
    refine_horizon: float = 5.0
    pairs: int = 20000


def _front_run(spec, seed, h, width, horizon, offset=0.0, field=None):
    g = front_grid((1.0, 0.0), h, spec.c_max * horizon + 4.0, width, back=3.0, periodic=True)
    if field is None:
        field = sample_field(replace(spec, transverse_period=width), seed)
    S = InitialSet.half_space((1.0, 0.0), offset=offset)
    return compute_arrival(field, S, g, horizon), field


def verify_suite(seed, cfg: VerifyConfig | None = None):
    """The nine regularity checks for one medium seed."""
    cfg = cfg or VerifyConfig()
    spec = cfg.spec
    c_min, c_max, L0, R0 = spec.c_min, spec.c_max, spec.lipschitz_bound, cfg.R0
    tau = filling_time(R0, c_min)
    L = tau / R0
    base, field = _front_run(spec, seed, cfg.h, cfg.width, cfg.horizon)
    g = base.grid
    wide, _ = _front_run(spec, seed, cfg.h, cfg.wide_width, cfg.horizon)
    reports = [
        check_small_scale_lipschitz(base, c_min, L0, cfg.small_scale_cap),
        check_large_scale_lipschitz(base, tau, L, cfg.pairs, seed, reference=wide),
        check_filling_time(base, R0, c_min, seed=seed),
        check_monotone_growth(base, tau, L, seed=seed),
    ]
    # two resolutions of the same medium on a narrower window
    coarse, _ = _front_run(spec, seed, cfg.h, cfg.refine_width, cfg.refine_horizon)
    fine, _ = _front_run(spec, seed, cfg.h / 2, cfg.refine_width, cfg.refine_horizon)
    reports.append(check_time_regularity(coarse, c_max, refined=fine))
    shifted, _ = _front_run(spec, seed, cfg.h, cfg.width, cfg.horizon, offset=-cfg.shift,
                            field=field)
    reports.append(check_data_continuity(base, shifted, c_min))
    # medium replaced by c_max beyond distance 2 of {m <= t}
    tl = cfg.localization_time
    bw = (c_max - c_min) / L0 if L0 > 0 else 0.0
    region = GridSet(base.m <= tl, g).dilate(max(2.0 - bw, 0.0))
    other = splice_fields(field, ConstantField(c_max, field.spec), region, bw)
    S = InitialSet.half_space((1.0, 0.0))
    spliced = compute_arrival(other, S, g, tl + 1.0)
    reports.append(check_sublevel_localization(base, spliced, tl, bw))
    # restart from the regularized sublevel set
    ts = cfg.semigroup_time
    Sreg = regularize_set(GridSet(base.m <= ts, g), R0)
    restart = compute_arrival(field, InitialSet.from_mask(Sreg, R0=R0), g, cfg.horizon - ts,
                              window=Window())
    reports.append(check_semigroup(base, restart, ts, tau))
    reports.append(check_regularization(base, restart, ts, R0, tau, c_min))
    for r in reports:
        r.details["seed"] = int(seed)
    return reports
