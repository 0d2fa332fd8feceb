import numpy as np
import pytest
from hypothesis import given, strategies as st

from forcedmcf import Grid2D, GridSet, box_grid, front_grid, hausdorff, regularize_set
from forcedmcf.grid import distance_to

import oracles


def positions(g):
    X, Y = g.coords()
    return np.stack([X, Y], axis=-1)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid2D(h=0.0)
    with pytest.raises(ValueError):
        Grid2D(nx=4)
    with pytest.raises(ValueError):
        Grid2D(direction=(1.0, 1.0))
    with pytest.raises(ValueError):
        Grid2D(sides=("periodic", "clamped", "clamped", "clamped"))


def test_rotated_grid_locates_its_nodes():
    e = (np.cos(0.3), np.sin(0.3))
    g = front_grid(e, 0.1, 10.0, 6.0, back=2.0)
    for i, j in [(0, 0), (7, 11), (g.nx - 1, g.ny - 1)]:
        assert g.nearest_node(g.node_position(i, j)) == (i, j)
    # the source boundary x.e = 0 sits at row back/h
    p = g.node_position(20, g.ny // 2)
    assert p @ np.asarray(e) == pytest.approx(0.0, abs=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.02, 0.6))
def test_hausdorff_matches_brute_force(seed, p):
    rng = np.random.default_rng(seed)
    g = Grid2D(h=0.1, nx=64, ny=64)
    A = rng.random(g.shape) < p * 0.1
    B = rng.random(g.shape) < p * 0.1
    A[rng.integers(64), rng.integers(64)] = True
    B[rng.integers(64), rng.integers(64)] = True
    P = positions(g)
    ref = oracles.brute_hausdorff(A, B, P)
    assert hausdorff(GridSet(A, g), GridSet(B, g)) == pytest.approx(ref, abs=1e-12)


def test_mask_distance_matches_brute_force():
    rng = np.random.default_rng(12)
    g = Grid2D(h=0.1, nx=64, ny=64)
    M = rng.random(g.shape) < 0.01
    d = distance_to(M, g)
    np.testing.assert_allclose(d, oracles.brute_distance(M, positions(g)), atol=1e-12)


def test_periodic_distance_wraps():
    g = Grid2D(h=1.0, nx=16, ny=16, transverse_periodic=True)
    M = np.zeros(g.shape, bool)
    M[5, 0] = True
    assert distance_to(M, g)[5, 15] == pytest.approx(1.0)


def test_hausdorff_trivial_cases():
    g = box_grid((0, 0), 3.0, 0.02)
    A = GridSet.disc(g, (0, 0), 1.0)
    assert hausdorff(A, A) == 0.0
    B = GridSet.disc(g, (0, 0), 2.0)
    assert hausdorff(A, B) == pytest.approx(1.0, abs=g.h)
    with pytest.raises(ValueError):
        hausdorff(A, GridSet(np.zeros(g.shape, bool), g))


def test_set_operations():
    g = box_grid((0, 0), 3.0, 0.05)
    A = GridSet.disc(g, (0, 0), 1.0)
    assert A.dilate(0.5).contains(A)
    assert A.contains(A.erode(0.3))
    assert (A | A.erode(0.3)).count() == A.count()
    assert (A & A.dilate(1.0)).count() == A.count()


def test_regularize_disc_grows_by_R0():
    g = box_grid((0, 0), 10.0, 0.05)
    S = GridSet.disc(g, (0, 0), 5.0)
    T = regularize_set(S, 2.0)
    assert T.contains(S)
    assert hausdorff(T, GridSet.disc(g, (0, 0), 7.0)) <= g.h + 1e-12


def test_regularize_merges_close_discs():
    from scipy.ndimage import label
    g = box_grid((0, 0), 8.0, 0.1)
    R0 = 2.0
    gap = 2 * (R0 + 1) - 0.5
    S = GridSet.disc(g, (-1 - gap / 2, 0), 1.0) | GridSet.disc(g, (1 + gap / 2, 0), 1.0)
    assert label(S.mask)[1] == 2
    assert label(regularize_set(S, R0).mask)[1] == 1


@given(st.integers(0, 2 ** 32 - 1))
def test_regularize_contains_and_is_close(seed):
    rng = np.random.default_rng(seed)
    g = box_grid((0, 0), 8.0, 0.1)
    S = GridSet.disc(g, tuple(rng.uniform(-2, 2, 2)), rng.uniform(0.5, 2.0))
    S = S | GridSet.disc(g, tuple(rng.uniform(-2, 2, 2)), rng.uniform(0.5, 2.0))
    R0 = 2.0
    T = regularize_set(S, R0)
    assert T.contains(S)
    assert hausdorff(S, T) <= 2 * R0 + 2 + 2 * g.h
    assert regularize_set(T, R0).contains(T)


def test_regularize_empty_rejected():
    g = box_grid((0, 0), 2.0, 0.1)
    with pytest.raises(ValueError):
        regularize_set(GridSet(np.zeros(g.shape, bool), g), 2.0)
