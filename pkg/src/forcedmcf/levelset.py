"""Explicit monotone evolution of u_t = tr[(I - n(x)n) D^2u] + c(x)|Du|.

Curvature uses the median of normalized second differences over eight
lattice directions (a monotone, consistent discretization of the
degenerate operator); forcing uses the Osher-Sethian upwind norm for a
positive speed. Under dt <= min(h^2/8, h/(4 c_max)) every nodal update is
a nondecreasing function of all stencil values, so ordered data stay
ordered step by step.

Fronts launched from half-spaces are advanced in a moving row window:
rows behind the last unreached node are frozen (their arrival times are
already recorded) and rows ahead are filled by linear extrapolation as
the window extends.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dfield

import numpy as np
from scipy.ndimage import distance_transform_edt

from . import _kernels as K
from .grid import Grid2D, GridSet, distance_to

TEST_MODE_ENV = "FORCEDMCF_TEST_MODE"


class SolverError(RuntimeError):
    """Non-finite values appeared; carries the state reached so far."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


class HorizonExceeded(RuntimeError):
    """Stopping predicate not met before the hard time cap."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


@dataclass
class InitialSet:
    """Initial region S: half-space {x.e <= offset}, disc, or node mask."""
    kind: str
    direction: tuple = (1.0, 0.0)
    offset: float = 0.0
    center: tuple = (0.0, 0.0)
    radius: float = 0.0
    mask: GridSet | None = None
    interior_ball_radius: float = 2.0
    exterior_ball_radius: float = 1.0

    @classmethod
    def half_space(cls, direction=(1.0, 0.0), offset=0.0, R0=2.0):
        return cls("half-space", direction=tuple(map(float, direction)), offset=float(offset),
                   interior_ball_radius=R0)

    @classmethod
    def disc(cls, center, radius, R0=None):
        R0 = float(radius) if R0 is None else R0
        return cls("disc", center=tuple(map(float, center)), radius=float(radius),
                   interior_ball_radius=R0)

    @classmethod
    def from_mask(cls, gs: GridSet, R0=2.0):
        return cls("mask", mask=gs, interior_ball_radius=R0)

    def check_regularity(self, c_min):
        need = max(2.0 / c_min, 2.0)
        if self.interior_ball_radius < need:
            raise ValueError(f"interior ball radius {self.interior_ball_radius:g} is below "
                             f"max(2/c_min, 2) = {need:g}")

    def distance(self, grid: Grid2D):
        """d(x, S) at every node."""
        X, Y = grid.coords()
        if self.kind == "half-space":
            e = np.asarray(self.direction)
            return np.maximum(X * e[0] + Y * e[1] - self.offset, 0.0)
        if self.kind == "disc":
            if self.radius < 0:
                raise ValueError("empty initial set")
            return np.maximum(np.hypot(X - self.center[0], Y - self.center[1]) - self.radius, 0.0)
        if self.kind == "mask":
            if self.mask is None or self.mask.empty:
                raise ValueError("empty initial set")
            if self.mask.grid == grid:
                return self.mask.distance()
            # resample through physical coordinates of the mask nodes
            from scipy.spatial import cKDTree
            MX, MY = self.mask.grid.coords()
            tree = cKDTree(np.column_stack([MX[self.mask.mask], MY[self.mask.mask]]))
            d, _ = tree.query(np.column_stack([X.ravel(), Y.ravel()]))
            return d.reshape(X.shape)
        raise ValueError(f"unknown initial set kind {self.kind!r}")

    def signed_distance(self, grid):
        """Positive inside, negative outside (exact for half-spaces and discs)."""
        X, Y = grid.coords()
        if self.kind == "half-space":
            e = np.asarray(self.direction)
            return self.offset - (X * e[0] + Y * e[1])
        if self.kind == "disc":
            return self.radius - np.hypot(X - self.center[0], Y - self.center[1])
        inside = self.mask.mask
        return np.where(inside, distance_to(~inside, grid), -distance_to(inside, grid))

    def node_mask(self, grid):
        return self.distance(grid) <= 0.0

    def describe(self):
        d = {"kind": self.kind, "R0": self.interior_ball_radius}
        if self.kind == "half-space":
            d.update(direction=list(self.direction), offset=self.offset)
        elif self.kind == "disc":
            d.update(center=list(self.center), radius=self.radius)
        else:
            d.update(nodes=self.mask.count())
        return d


@dataclass
class Window:
    """Moving row window: margins in length units, re-checked every ``every`` steps."""
    back: float = 2.5
    ahead: float = 3.5
    every: int = 20


@dataclass
class LevelSetState:
    grid: Grid2D
    U: np.ndarray                  # padded storage, node (i, j) at U[i + 2, j + 2]
    m: np.ndarray                  # first upward crossing time, inf if none yet
    t: float = 0.0
    steps: int = 0
    reinit_count: int = 0
    cfl_history: list = dfield(default_factory=list)   # [dt, count] runs
    window: Window | None = None
    i0: int = 0
    i1: int = 0
    reinit_every: int = 50
    scheme: str = "median"
    c: np.ndarray | None = None
    field_ref: object = None

    @property
    def u(self):
        return self.U[2:-2, 2:-2]

    def copy(self):
        s = LevelSetState(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        s.U = self.U.copy()
        s.m = self.m.copy()
        s.cfl_history = [list(r) for r in self.cfl_history]
        return s

    def dt(self, c_max):
        h = self.grid.h
        if c_max <= 0:
            return h * h / 8
        return min(h * h / 8, h / (4 * c_max))

    def metadata(self):
        return {"grid": self.grid.to_dict(), "t": self.t, "steps": self.steps,
                "cfl_history": self.cfl_history, "reinit_count": self.reinit_count,
                "scheme": self.scheme, "window": [self.i0, self.i1]}


def init_state(grid: Grid2D, S: InitialSet, signed=True, window: Window | None = None,
               reinit_every=50, scheme="median") -> LevelSetState:
    """Initial level-set function with {u >= 0} = S.

    ``signed=False`` gives exactly u = -d(x, S), which is flat (zero) on S.
    That plateau stalls a monotone upwind scheme at level 0: a node just
    outside S only sees a zero one-sided difference from behind and decays
    geometrically toward 0 without crossing. The default uses the signed
    distance instead, which agrees with -d(x, S) off S and has the same
    closed superlevel set, so the evolution of {u >= 0} is unchanged.
    """
    if scheme not in ("median", "central"):
        raise ValueError("scheme must be 'median' or 'central'")
    u = S.signed_distance(grid) if signed else -S.distance(grid)
    inside = u >= 0
    if not inside.any() and S.kind != "half-space":
        raise ValueError("initial set has no node on the grid")
    U = np.zeros((grid.nx + 4, grid.ny + 4))
    U[2:-2, 2:-2] = u
    m = np.full(grid.shape, np.inf)
    m[inside] = 0.0
    st = LevelSetState(grid=grid, U=U, m=m, window=window, i0=0, i1=grid.nx,
                       reinit_every=reinit_every, scheme=scheme)
    if window is not None:
        _set_window(st, initial=True)
    return st


# ------------------------------------------------------------ boundaries

def _fill_axis0(U, lo, hi, kind_lo, kind_hi):
    """Ghost rows below padded row ``lo`` and above ``hi - 1``."""
    for kind, b, s in ((kind_lo, lo, -1), (kind_hi, hi - 1, 1)):
        if kind == "extrapolation":
            U[b + s] = 2 * U[b] - U[b - s]
            U[b + 2 * s] = 3 * U[b] - 2 * U[b - s]
        elif kind == "clamped":
            U[b + s] = U[b]
            U[b + 2 * s] = U[b]
        elif kind == "reflect":
            U[b + s] = U[b - s]
            U[b + 2 * s] = U[b - 2 * s]
        else:
            raise ValueError(kind)


def _fill_axis1(U, r0, r1, kind_lo, kind_hi):
    V = U[r0:r1]
    if kind_lo == "periodic":
        V[:, 0:2] = V[:, -4:-2]
        V[:, -2:] = V[:, 2:4]
        return
    for kind, b, s in ((kind_lo, 2, -1), (kind_hi, V.shape[1] - 3, 1)):
        if kind == "extrapolation":
            V[:, b + s] = 2 * V[:, b] - V[:, b - s]
            V[:, b + 2 * s] = 3 * V[:, b] - 2 * V[:, b - s]
        elif kind == "clamped":
            V[:, b + s] = V[:, b]
            V[:, b + 2 * s] = V[:, b]
        elif kind == "reflect":
            V[:, b + s] = V[:, b - s]
            V[:, b + 2 * s] = V[:, b - 2 * s]
        else:
            raise ValueError(kind)


def fill_ghosts(st: LevelSetState):
    """Ghost values around the active rows; interior window edges extrapolate."""
    k = st.grid.side_kinds
    lo, hi = st.i0 + 2, st.i1 + 2
    klo = k[0] if st.i0 == 0 else "extrapolation"
    khi = k[1] if st.i1 == st.grid.nx else "extrapolation"
    _fill_axis0(st.U, lo, hi, klo, khi)
    _fill_axis1(st.U, lo - 2, hi + 2, k[2], k[3])


def _set_window(st, initial=False):
    nx, h = st.grid.nx, st.grid.h
    w = st.window
    act = st.u[st.i0:st.i1]
    neg = np.flatnonzero((act < 0).any(axis=1))
    pos = np.flatnonzero((act >= 0).any(axis=1))
    first_neg = st.i0 + neg[0] if neg.size else st.i1
    last_pos = st.i0 + pos[-1] if pos.size else st.i0
    new_i0 = max(st.i0 if not initial else 0, first_neg - int(math.ceil(w.back / h)))
    new_i1 = min(nx, max(st.i1 if not initial else 0, last_pos + 1 + int(math.ceil(w.ahead / h))))
    new_i0 = min(max(new_i0, 0), max(new_i1 - 8, 0))
    if not initial and new_i1 > st.i1:
        U = st.U
        for I in range(st.i1 + 2, new_i1 + 2):
            U[I] = 2 * U[I - 1] - U[I - 2]
    st.i0, st.i1 = new_i0, new_i1


# -------------------------------------------------------------- operators

def _field_values(st, field):
    if field is None:
        # forcing disabled: only the solver test harness may ask for this
        return np.zeros(st.grid.shape)
    if st.c is None or st.field_ref is not field:
        st.c = np.ascontiguousarray(field.on_grid(st.grid))
        st.field_ref = field
    return st.c


def curvature_term(st: LevelSetState, node, scheme="central"):
    """Curvature part of the operator at node (i, j).

    ``central``: (u_xx u_y^2 - 2 u_xy u_x u_y + u_yy u_x^2)/(|Du|^2 + eps^2),
    eps = 1e-6 h, in grid-axis coordinates. ``median``: the monotone
    operator the solver actually uses, bias factor included.
    """
    fill_ghosts(st)
    i, j = node
    h = st.grid.h
    if scheme == "central":
        return float(K.central_curvature(st.U, i + 2, j + 2, h, 1e-6 * h))
    return float(K.KCAL * K.median_curvature(st.U, i + 2, j + 2, K.stencil_weights(h),
                                              np.empty(8), np.empty(8), np.empty(16)))


def forcing_term(st: LevelSetState, field, node):
    """c(x) times the upwind gradient norm G+ at node (i, j)."""
    fill_ghosts(st)
    i, j = node
    c = field.evaluate(st.grid.node_position(i, j))
    return float(c * K.upwind_norm(st.U, i + 2, j + 2, st.grid.h))


def _record_dt(st, dt):
    if st.cfl_history and st.cfl_history[-1][0] == dt:
        st.cfl_history[-1][1] += 1
    else:
        st.cfl_history.append([dt, 1])


def step(st: LevelSetState, field, dt=None) -> LevelSetState:
    """Advance in place by one explicit step (at most the CFL step)."""
    c = _field_values(st, field)
    c_max = 0.0 if field is None else field.c_max
    dt_cfl = st.dt(c_max)
    dt = dt_cfl if dt is None else min(dt, dt_cfl)
    if st.window is not None and st.steps % st.window.every == 0 and st.steps > 0:
        _set_window(st)
    fill_ghosts(st)
    out = np.empty((st.i1 - st.i0, st.grid.ny))
    ok = K.level_set_step(st.U, c, out, st.m, st.t, dt, st.grid.h, st.i0, st.i1,
                          st.scheme == "central", 1e-6 * st.grid.h)
    st.U[st.i0 + 2:st.i1 + 2, 2:-2] = out
    st.t += dt
    st.steps += 1
    _record_dt(st, dt)
    if not ok:
        raise SolverError(f"non-finite u at t={st.t:.6g} (step {st.steps}); "
                          f"dt={dt:.3g} likely violates the CFL bound", st)
    if st.reinit_every and st.steps % st.reinit_every == 0:
        reinitialize(st)
    return st


def reinitialize(st: LevelSetState, band=5):
    """Rebuild u as a distance function away from the zero level set.

    Nodes with |u| <= band*h are kept. Every other node takes
    u(y) -/+ |x - y| from its nearest kept node y, which is exact for
    planar data with |Du| = 1 and never changes the sign of u.
    """
    h = st.grid.h
    V = st.U[st.i0 + 2:st.i1 + 2, 2:-2]
    bh = band * h
    keep = np.abs(V) <= bh
    if keep.all() or not keep.any():
        return st
    per = st.grid.periodic
    ny = V.shape[1]
    free = ~keep
    if per:
        free = np.concatenate([free] * 3, axis=1)
    d, (ii, jj) = distance_transform_edt(free, sampling=h, return_indices=True)
    if per:
        d, ii, jj = d[:, ny:2 * ny], ii[:, ny:2 * ny], jj[:, ny:2 * ny] % ny
    base = V[ii, jj]
    new = np.where(V > 0, np.maximum(base + d, bh), np.minimum(base - d, -bh))
    V[...] = np.where(keep, V, new)
    st.reinit_count += 1
    return st


def evolve_until(st: LevelSetState, field, until_time=None, probes=None, t_max=None):
    """Step until t >= until_time, or until every probe point is reached.

    The last step is shortened to land on ``until_time`` exactly. Raises
    HorizonExceeded (carrying the state) if ``t_max`` passes first.
    """
    if until_time is None and probes is None:
        raise ValueError("need until_time or probes")
    if t_max is None:
        t_max = until_time if until_time is not None else math.inf
    idx = None
    if probes is not None:
        idx = [st.grid.nearest_node(p) for p in np.atleast_2d(probes)]
        for i, j in idx:
            if not (0 <= i < st.grid.nx and 0 <= j < st.grid.ny):
                raise ValueError(f"probe node {(i, j)} lies off the grid")

    def done():
        if until_time is not None and st.t >= until_time - 1e-12:
            return True
        return idx is not None and all(np.isfinite(st.m[i, j]) for i, j in idx)

    while not done():
        if st.t >= t_max - 1e-12:
            raise HorizonExceeded(f"predicate not met by t_max={t_max:g}", st)
        cap = (until_time if until_time is not None else t_max) - st.t
        step(st, field, dt=min(cap, t_max - st.t))
    return st


# --------------------------------------------------------------- exports

def snapshot_rows(st: LevelSetState):
    X, Y = st.grid.coords()
    return X.ravel(), Y.ravel(), st.u.ravel()


def write_snapshot(st: LevelSetState, csv_path, json_path=None):
    X, Y, u = snapshot_rows(st)
    with open(csv_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("x,y,u\n")
        for a, b, c in zip(X, Y, u):
            f.write(f"{a!r},{b!r},{c!r}\n")
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(st.metadata(), f, indent=2, sort_keys=True)
            f.write("\n")
