import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isocloth.analysis import (
    area_metrics,
    drape_coefficient,
    element_area,
    element_areas,
    holdout_window,
    trajectory_error,
)
from isocloth.assembly import assemble_lumped_mass
from isocloth.generators import annulus, grid, jittered_triangles, with_noise
from isocloth.mesh import build_mesh, stack

from helpers import random_rigid, unit_quad


def test_element_area_examples():
    m = unit_quad()
    assert abs(element_area(m, m.rest_positions, 0) - 1.0) <= 4 * np.finfo(float).eps
    for s in (0.5, 2.0, 3.7):
        assert np.isclose(element_area(m, s * m.rest_positions, 0), s * s, rtol=1e-14)


def test_folded_sheet_keeps_area():
    m = grid(3, 2, width=2.0, height=1.0)
    X = m.rest_positions.copy()
    right = X[:, 0] > 1.0 + 1e-12
    X[right, 2] = X[right, 0] - 1.0
    X[right, 0] = 1.0
    a = element_areas(m, X)
    np.testing.assert_allclose(a, [1.0, 1.0], rtol=1e-3)


def test_rigid_trajectory_has_zero_area_error():
    m = jittered_triangles(6, 6, seed=1)
    rng = np.random.default_rng(0)
    frames = [stack(m.rest_positions)]
    for _ in range(4):
        R, b = random_rigid(rng)
        frames.append(stack(m.rest_positions @ R.T + b))
    am = area_metrics(m, np.array(frames))
    for series in (am.e_t, am.e_m, am.d_a):
        np.testing.assert_allclose(series, 0, atol=1e-12)


def test_plus_minus_ten_percent():
    # four disjoint unit-area triangles
    nodes, elements = [], []
    for k in range(4):
        o = np.array([3.0 * k, 0, 0])
        nodes += [o, o + [np.sqrt(2), 0, 0], o + [0, np.sqrt(2), 0]]
        elements.append((3 * k, 3 * k + 1, 3 * k + 2))
    m = build_mesh(nodes, elements)
    X = m.rest_positions.copy()
    for e, f in ((0, 1.1), (1, 0.9)):
        idx = list(elements[e])
        c = X[idx].mean(axis=0)
        X[idx] = c + np.sqrt(f) * (X[idx] - c)
    am = area_metrics(m, np.array([stack(m.rest_positions), stack(X)]))
    assert np.isclose(am.e_m[1], 0.2 / 4)
    assert am.e_t[1] < 1e-12
    np.testing.assert_allclose(am.signed[1], [0.1, -0.1, 0, 0], atol=1e-12)
    assert am.d_a[1] >= am.e_m[1]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_area_metric_invariants(seed):
    m = grid(4, 4)
    rng = np.random.default_rng(seed)
    frames = stack(m.rest_positions) + rng.normal(scale=0.05, size=(5, 3 * m.n))
    frames[0] = stack(m.rest_positions)
    am = area_metrics(m, frames)
    assert np.all(am.e_t >= 0) and np.all(am.e_m >= 0)
    assert np.all(am.d_a >= am.e_m - 1e-15)
    assert np.all(am.signed >= -1)


def test_drape_flat_ring_is_100():
    ring = annulus(0.09, 0.15, 8, 120)
    dc = drape_coefficient(ring, ring.rest_positions)
    assert abs(dc.DC - 100) <= 1.0
    assert dc.DC <= 101


def test_drape_vertical_cylinder_is_zero():
    ring = annulus(0.09, 0.15, 8, 120)
    P = ring.rest_positions
    r = np.linalg.norm(P[:, :2], axis=1)
    X = P.copy()
    X[:, :2] *= (0.09 / r)[:, None]
    X[:, 2] = -(r - 0.09)
    dc = drape_coefficient(ring, X)
    assert dc.DC <= 2.0


def test_drape_counts_overlap_once():
    ring = annulus(0.09, 0.15, 6, 80)
    X = ring.rest_positions.copy()
    # fold: squash every node halfway in radius, doubling the layers
    r = np.linalg.norm(X[:, :2], axis=1)
    X[:, :2] *= ((0.09 + 0.5 * (r - 0.09)) / r)[:, None]
    full = drape_coefficient(ring, X).DC
    expected = 100 * (0.12**2 - 0.09**2) / (0.15**2 - 0.09**2)
    assert abs(full - expected) < 1.5


def test_drape_bad_grid():
    ring = annulus(0.09, 0.15, 3, 20)
    with pytest.raises(ValueError):
        drape_coefficient(ring, ring.rest_positions, grid=0)


def test_trajectory_error_examples():
    m = grid(5, 5)
    mass = assemble_lumped_mass(m)
    rng = np.random.default_rng(3)
    sim = stack(m.rest_positions) + rng.normal(scale=0.01, size=(7, 3 * m.n))
    same = trajectory_error(sim, sim, mass)
    assert np.all(same.e == 0) and np.all(same.d == 0)
    shifted = sim.copy()
    shifted[:, : m.n] += 0.01
    err = trajectory_error(sim, shifted, mass)
    np.testing.assert_allclose(err.e, 0.01 * np.sqrt(mass.total), rtol=1e-12)
    np.testing.assert_allclose(err.node_mean, 0.01, rtol=1e-12)
    np.testing.assert_allclose(err.d, err.e, rtol=1e-10)
    with pytest.raises(ValueError):
        trajectory_error(sim, sim[:-1], mass)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_trajectory_error_rigid_invariance(seed):
    m = with_noise(grid(4, 5), 0.01, seed)
    mass = assemble_lumped_mass(m)
    rng = np.random.default_rng(seed)
    a = stack(m.rest_positions) + rng.normal(scale=0.02, size=(6, 3 * m.n))
    b = stack(m.rest_positions) + rng.normal(scale=0.02, size=(6, 3 * m.n))
    R, t = random_rigid(rng)

    def move(F):
        X = F.reshape(len(F), 3, -1).transpose(0, 2, 1) @ R.T + t
        return X.transpose(0, 2, 1).reshape(len(F), -1)

    e0, e1 = trajectory_error(a, b, mass), trajectory_error(move(a), move(b), mass)
    np.testing.assert_allclose(e0.e, e1.e, rtol=1e-9, atol=1e-14)
    assert np.all(e0.d >= e0.e)
    am0, am1 = area_metrics(m, a), area_metrics(m, move(a))
    np.testing.assert_allclose(am0.e_m, am1.e_m, atol=1e-10)


def test_holdout_window():
    assert holdout_window(11) == (6, 11)
    assert holdout_window(1402) == (701, 1402)
