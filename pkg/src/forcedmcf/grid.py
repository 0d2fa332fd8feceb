"""Rotated node grids and boolean node sets with EDT-based morphology."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.ndimage import distance_transform_edt

SIDE_KINDS = ("extrapolation", "clamped", "reflect", "periodic")


@dataclass(frozen=True)
class Grid2D:
    """Node (i, j) sits at ``origin + i*h*e + j*h*e_perp`` with e_perp = (-e_y, e_x).

    Axis 0 runs along the front normal ``direction``, axis 1 across it.
    ``sides`` optionally overrides the boundary kind of each edge
    (normal-low, normal-high, transverse-low, transverse-high).
    """
    origin: tuple = (0.0, 0.0)
    h: float = 0.1
    nx: int = 64
    ny: int = 64
    direction: tuple = (1.0, 0.0)
    transverse_periodic: bool = False
    normal_boundary: str = "extrapolation"
    sides: tuple | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("grid spacing h must be positive")
        if self.nx < 8 or self.ny < 8:
            raise ValueError("grid needs at least 8 nodes per axis")
        n = math.hypot(*self.direction)
        if abs(n - 1.0) > 1e-12:
            raise ValueError("direction must be a unit vector")
        if self.normal_boundary not in ("extrapolation", "clamped"):
            raise ValueError("normal_boundary must be 'extrapolation' or 'clamped'")
        if self.sides is not None:
            if len(self.sides) != 4 or any(k not in SIDE_KINDS for k in self.sides):
                raise ValueError(f"sides must be four of {SIDE_KINDS}")
            if (self.sides[2] == "periodic") != (self.sides[3] == "periodic"):
                raise ValueError("periodic transverse sides come in pairs")
            if "periodic" in self.sides[:2]:
                raise ValueError("the normal axis cannot be periodic")

    @property
    def side_kinds(self):
        if self.sides is not None:
            return tuple(self.sides)
        tk = "periodic" if self.transverse_periodic else "extrapolation"
        return (self.normal_boundary, self.normal_boundary, tk, tk)

    @property
    def periodic(self):
        return self.side_kinds[2] == "periodic"

    @property
    def e(self):
        return np.asarray(self.direction, dtype=float)

    @property
    def e_perp(self):
        ex, ey = self.direction
        return np.array([-ey, ex])

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def transverse_extent(self):
        return self.ny * self.h

    def coords(self, rows=None):
        """Physical (X, Y) of all nodes, or of a row slice."""
        i = np.arange(self.nx, dtype=float) if rows is None else np.arange(*rows, dtype=float)
        j = np.arange(self.ny, dtype=float)
        ii, jj = np.meshgrid(i * self.h, j * self.h, indexing="ij")
        e, p = self.e, self.e_perp
        X = self.origin[0] + ii * e[0] + jj * p[0]
        Y = self.origin[1] + ii * e[1] + jj * p[1]
        return X, Y

    def node_position(self, i, j):
        return np.asarray(self.origin) + i * self.h * self.e + j * self.h * self.e_perp

    def locate(self, x):
        """Fractional (i, j) index of a physical point."""
        d = np.asarray(x, dtype=float) - np.asarray(self.origin)
        return d @ self.e / self.h, d @ self.e_perp / self.h

    def nearest_node(self, x):
        fi, fj = self.locate(x)
        return int(round(fi)), int(round(fj))

    def to_dict(self):
        d = asdict(self)
        d["origin"] = list(self.origin)
        d["direction"] = list(self.direction)
        d["sides"] = list(self.side_kinds)
        return d


def front_grid(direction, h, length, width, back=3.0, periodic=False, sides=None):
    """Grid for a half-space source {x.e <= 0}: rows from s = -back to ``length``,
    transverse span ``width`` centred on the line through the origin."""
    nx = int(round((length + back) / h)) + 1
    ny = int(round(width / h))
    e = np.asarray(direction, dtype=float)
    p = np.array([-e[1], e[0]])
    origin = -back * e - (ny // 2) * h * p
    return Grid2D(origin=(float(origin[0]), float(origin[1])), h=h, nx=nx, ny=ny,
                  direction=(float(e[0]), float(e[1])), transverse_periodic=periodic,
                  sides=sides)


def box_grid(center, half_width, h, sides=None):
    """Axis-aligned square grid centred on ``center``."""
    n = int(round(2 * half_width / h)) + 1
    origin = (center[0] - half_width, center[1] - half_width)
    return Grid2D(origin=origin, h=h, nx=n, ny=n, sides=sides)


# ---------------------------------------------------------------- sets

def _tile(a, periodic):
    return np.concatenate([a, a, a], axis=1) if periodic else a


def distance_to(mask, grid):
    """Euclidean distance from every node to the nearest node of ``mask``
    (exact for node sets; transverse wrap-around on periodic grids)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.full(mask.shape, np.inf)
    ny = mask.shape[1]
    d = distance_transform_edt(~_tile(mask, grid.periodic), sampling=grid.h)
    return d[:, ny:2 * ny] if grid.periodic else d


@dataclass
class GridSet:
    """Closed set represented by a boolean node mask on ``grid``."""
    mask: np.ndarray
    grid: Grid2D
    _dist: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.grid.shape:
            raise ValueError("mask shape does not match grid")

    @classmethod
    def from_function(cls, grid, fn):
        X, Y = grid.coords()
        return cls(fn(X, Y), grid)

    @classmethod
    def disc(cls, grid, center, radius):
        return cls.from_function(grid, lambda X, Y: np.hypot(X - center[0], Y - center[1]) <= radius)

    @property
    def empty(self):
        return not self.mask.any()

    def count(self):
        return int(self.mask.sum())

    def distance(self):
        """Cached distance to the set."""
        if self._dist is None:
            self._dist = distance_to(self.mask, self.grid)
        return self._dist

    def dilate(self, rho):
        return GridSet(self.distance() <= rho + 1e-9 * self.grid.h, self.grid)

    def erode(self, rho):
        # complement restricted to the window, so the window edge is not a boundary
        dc = distance_to(~self.mask, self.grid)
        return GridSet(self.mask & (dc > rho + 1e-9 * self.grid.h), self.grid)

    def contains(self, other):
        return bool(np.all(self.mask[other.mask]))

    def __and__(self, other):
        return GridSet(self.mask & other.mask, self.grid)

    def __or__(self, other):
        return GridSet(self.mask | other.mask, self.grid)


def _check_pair(A, B):
    if A.empty or B.empty:
        raise ValueError("Hausdorff distance needs two nonempty sets")
    if A.grid != B.grid:
        raise ValueError("sets live on different grids")


def directed_distance(A, B):
    """sup over a in A of the distance from a to B."""
    _check_pair(A, B)
    return float(B.distance()[A.mask].max())


def hausdorff(A, B):
    """Hausdorff distance between two node sets, exact through EDT."""
    return max(directed_distance(A, B), directed_distance(B, A))
