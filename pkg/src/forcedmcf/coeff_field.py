"""Stationary random speed fields with exact unit range of dependence.

The random field is a Poisson cloud of radial C1 bumps, generated cell by
cell from a counter-based hash so any window can be evaluated on demand:

    c(x) = c_min + sat(max_k a_k * phi(|x - p_k| / r)),  phi(s) = 1 - 3s^2 + 2s^3

Taking the max (rather than the sum) of the bumps keeps the Lipschitz
constant at a_hi * 1.5 / r no matter how many supports overlap, and
``sat`` is a C1 saturation with slope <= 1 that keeps c below c_max.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels as K
from .grid import GridSet

PROFILE_SLOPE = 1.5  # max |phi'| on [0, 1], attained at s = 1/2

_KEYS = {
    "c_min": ("c_min", float),
    "c_max": ("c_max", float),
    "lipschitz_bound": ("lipschitz_bound", float),
    "bump_radius": ("bump_radius", float),
    "bump_intensity": ("bump_intensity", float),
    "amp_lo": ("amp_lo", float),
    "amp_hi": ("amp_hi", float),
    "transverse_period": ("transverse_period", float),
    "seed": ("seed", int),
}


@dataclass(frozen=True)
class FieldSpec:
    c_min: float = 1.0
    c_max: float = 2.0
    lipschitz_bound: float = 5.0
    bump_radius: float = 0.4
    bump_intensity: float = 1.0
    amp_lo: float = 0.5
    amp_hi: float = 1.0
    transverse_period: float | None = None
    seed: int = 0

    def validate(self):
        """Raise ValueError naming the first violated constraint."""
        if not (0 < self.c_min <= self.c_max < math.inf):
            raise ValueError("c_min/c_max: need 0 < c_min <= c_max < inf")
        if not (0 <= self.lipschitz_bound < math.inf):
            raise ValueError("lipschitz_bound: need a finite nonnegative L0")
        if not self.bump_radius > 0:
            raise ValueError("bump_radius: must be positive")
        if self.bump_radius > 0.5:
            raise ValueError("bump_radius: must be <= 1/2, otherwise values at distance 1 "
                             "share bumps and the unit range of dependence is lost")
        if self.bump_intensity < 0:
            raise ValueError("bump_intensity: must be nonnegative")
        if not (0 <= self.amp_lo <= self.amp_hi):
            raise ValueError("amp_lo/amp_hi: need 0 <= amp_lo <= amp_hi")
        if self.bump_intensity > 0 and self.certified_lipschitz() > self.lipschitz_bound * (1 + 1e-12):
            raise ValueError(
                f"bump_radius/amp_hi: bump slope 1.5*amp_hi/r = {self.certified_lipschitz():.4g} "
                f"exceeds lipschitz_bound {self.lipschitz_bound:g}")
        if self.transverse_period is not None:
            P = self.transverse_period
            if P <= 0 or abs(P - round(P)) > 1e-9:
                raise ValueError("transverse_period: must be a positive whole number of unit cells")
        if not (0 <= self.seed < 2 ** 64):
            raise ValueError("seed: must fit in 64 unsigned bits")
        return self

    def certified_lipschitz(self):
        if self.bump_intensity == 0 or self.amp_hi == 0:
            return 0.0
        return self.amp_hi * PROFILE_SLOPE / self.bump_radius

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            lines.append(f"{f.name} = {v!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kw = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {n}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in _KEYS:
                raise ValueError(f"unknown key: {k}")
            name, typ = _KEYS[k]
            try:
                kw[name] = int(v, 0) if typ is int else typ(v)
            except ValueError:
                raise ValueError(f"{k}: cannot parse {v!r} as {typ.__name__}") from None
        return cls(**kw).validate()


class CoefficientField:
    """Speed field c(x). Subclasses supply ``_eval`` on flat coordinate arrays."""
    kind = "abstract"

    def __init__(self, spec: FieldSpec):
        self.spec = spec
        self.realized_bounds = [math.inf, -math.inf]

    @property
    def c_min(self):
        return self.spec.c_min

    @property
    def c_max(self):
        return self.spec.c_max

    def _eval(self, xs, ys):
        raise NotImplementedError

    def evaluate(self, x, y=None):
        """Evaluate at points. Accepts (x, y) arrays or an (..., 2) array."""
        if y is None:
            p = np.asarray(x, dtype=float)
            x, y = p[..., 0], p[..., 1]
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x, y = np.broadcast_arrays(x, y)
        out = self._eval(np.ascontiguousarray(x).ravel(), np.ascontiguousarray(y).ravel())
        if out.size:
            self.realized_bounds[0] = min(self.realized_bounds[0], float(out.min()))
            self.realized_bounds[1] = max(self.realized_bounds[1], float(out.max()))
        return out.reshape(x.shape) if x.ndim else float(out[0])

    __call__ = evaluate

    def on_grid(self, grid, rows=None):
        X, Y = grid.coords(rows)
        return self.evaluate(X, Y)

    def describe(self):
        return {"kind": self.kind}


class BumpField(CoefficientField):
    kind = "random-bumps"

    def __init__(self, spec, seed):
        super().__init__(replace(spec, seed=int(seed)).validate())

    def _eval(self, xs, ys):
        s = self.spec
        out = np.empty(xs.size)
        period = int(round(s.transverse_period)) if s.transverse_period else 0
        K.bump_field_eval(xs, ys, out, np.uint64(s.seed), s.bump_intensity, s.bump_radius,
                          s.amp_lo, s.amp_hi, s.c_min, s.c_max, period)
        return out

    def bumps_near(self, x, y, reach=1):
        """Bump (px, py, amplitude) rows from cells within ``reach`` of (x, y)."""
        s = self.spec
        period = int(round(s.transverse_period)) if s.transverse_period else 0
        cx0, cy0 = math.floor(x), math.floor(y)
        rows = []
        for cx in range(cx0 - reach, cx0 + reach + 1):
            for cy in range(cy0 - reach, cy0 + reach + 1):
                cyk = cy % period if period else cy
                rows.append(K.cell_points(np.uint64(s.seed), cx, cy, cyk,
                                          s.bump_intensity, s.amp_lo, s.amp_hi))
        return np.concatenate(rows) if rows else np.empty((0, 3))

    def describe(self):
        d = {"kind": self.kind, "seed": self.spec.seed}
        d["certified_lipschitz"] = self.spec.certified_lipschitz()
        return d


class ConstantField(CoefficientField):
    kind = "constant"

    def __init__(self, value, spec: FieldSpec | None = None):
        value = float(value)
        if spec is None:
            spec = FieldSpec(c_min=value, c_max=value, lipschitz_bound=0.0, bump_intensity=0.0)
        if not spec.c_min <= value <= spec.c_max:
            raise ValueError("constant value outside [c_min, c_max]")
        super().__init__(spec)
        self.value = value

    def _eval(self, xs, ys):
        return np.full(xs.size, self.value)

    def describe(self):
        return {"kind": self.kind, "value": self.value}


class LaminarField(CoefficientField):
    """c(x) = mean + amp * sin(2*pi*(x . k) / period + phase), varying along one axis."""
    kind = "periodic"

    def __init__(self, mean, amp, period, axis=(1.0, 0.0), phase=0.0, lipschitz_bound=None):
        mean, amp, period = float(mean), float(amp), float(period)
        if not 0 <= amp < mean:
            raise ValueError("laminar field needs 0 <= amp < mean so that c > 0")
        slope = 2 * math.pi * amp / period
        L0 = slope if lipschitz_bound is None else float(lipschitz_bound)
        if slope > L0 * (1 + 1e-12):
            raise ValueError("laminar field slope exceeds lipschitz_bound")
        super().__init__(FieldSpec(c_min=mean - amp, c_max=mean + amp, lipschitz_bound=L0,
                                   bump_intensity=0.0))
        self.mean, self.amp, self.period, self.phase = mean, amp, period, float(phase)
        a = np.asarray(axis, dtype=float)
        self.axis = a / np.linalg.norm(a)

    def _eval(self, xs, ys):
        s = xs * self.axis[0] + ys * self.axis[1]
        return self.mean + self.amp * np.sin(2 * math.pi * s / self.period + self.phase)

    def harmonic_speed(self):
        """Speed of a flat front crossing the layers: 1 / mean(1/c)."""
        return math.sqrt(self.mean ** 2 - self.amp ** 2)

    def describe(self):
        return {"kind": self.kind, "mean": self.mean, "amp": self.amp, "period": self.period,
                "axis": self.axis.tolist(), "phase": self.phase}


class SplicedField(CoefficientField):
    """``inner`` on a node region, ``outer`` beyond ``blend_width``, linear blend between."""
    kind = "spliced"

    def __init__(self, inner, outer, region: GridSet, blend_width):
        a, b = inner.spec, outer.spec
        if (a.c_min, a.c_max, a.lipschitz_bound) != (b.c_min, b.c_max, b.lipschitz_bound):
            raise ValueError("spliced fields must share c_min, c_max and lipschitz_bound")
        if a.lipschitz_bound == 0:
            if a.c_max > a.c_min:
                raise ValueError("zero Lipschitz budget cannot absorb a splice")
        elif blend_width < (a.c_max - a.c_min) / a.lipschitz_bound * (1 - 1e-12):
            raise ValueError(f"blend_width must be >= (c_max - c_min)/L0 = "
                             f"{(a.c_max - a.c_min) / a.lipschitz_bound:g}")
        super().__init__(a)
        self.inner, self.outer = inner, outer
        self.blend_width = float(blend_width)
        self.region = region
        X, Y = region.grid.coords()
        pts = np.column_stack([X[region.mask], Y[region.mask]])
        self._everywhere = region.mask.all()
        self._tree = cKDTree(pts) if len(pts) else None

    def weight(self, xs, ys):
        if self._tree is None:
            return np.zeros(xs.size)
        if self._everywhere:
            return np.ones(xs.size)
        d, _ = self._tree.query(np.column_stack([xs, ys]))
        if self.blend_width == 0:
            return (d == 0).astype(float)
        return np.clip(1.0 - d / self.blend_width, 0.0, 1.0)

    def _eval(self, xs, ys):
        w = self.weight(xs, ys)
        ci = self.inner._eval(xs, ys)
        co = self.outer._eval(xs, ys)
        return np.where(w >= 1.0, ci, np.where(w <= 0.0, co, w * ci + (1.0 - w) * co))

    def describe(self):
        return {"kind": self.kind, "inner": self.inner.describe(), "outer": self.outer.describe(),
                "blend_width": self.blend_width}


def sample_field(spec: FieldSpec, seed=None) -> CoefficientField:
    """Random bump field for ``spec`` (seed overrides ``spec.seed``)."""
    spec.validate()
    seed = spec.seed if seed is None else int(seed)
    if spec.bump_intensity == 0:
        return ConstantField(spec.c_min, replace(spec, seed=seed))
    return BumpField(spec, seed)


def evaluate(field: CoefficientField, x, y=None):
    return field.evaluate(x, y)


def splice_fields(inner, outer, region, blend_width):
    return SplicedField(inner, outer, region, blend_width)


def ls_condition_margin(field, region, probe_spacing):
    """Grid infimum of c^2 - |Dc| over rectangle ((x0, x1), (y0, y1)).

    Dc is taken by central differences at ``probe_spacing``; a negative
    value certifies that the probed field breaks the Lions-Souganidis
    condition somewhere in the region.
    """
    if not probe_spacing > 0:
        raise ValueError("probe_spacing must be positive")
    (x0, x1), (y0, y1) = region
    xs = np.arange(x0, x1 + 0.5 * probe_spacing, probe_spacing)
    ys = np.arange(y0, y1 + 0.5 * probe_spacing, probe_spacing)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    hs = probe_spacing
    c = field.evaluate(X, Y)
    gx = (field.evaluate(X + hs, Y) - field.evaluate(X - hs, Y)) / (2 * hs)
    gy = (field.evaluate(X, Y + hs) - field.evaluate(X, Y - hs)) / (2 * hs)
    return float(np.min(c * c - np.hypot(gx, gy)))
