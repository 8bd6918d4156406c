import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from isocloth.assembly import assemble_metric_tensors
from isocloth.constraints import ConstraintSystem, eval_constraints, eval_jacobian, relative_residual
from isocloth.generators import grid, jittered_triangles, with_noise
from isocloth.mesh import stack, unstack

from helpers import grid3, random_rigid, sample_meshes


def system_for(mesh, **kw):
    return ConstraintSystem.from_mesh(mesh, **kw)


def test_row_count():
    mesh = jittered_triangles(8, 8, seed=1)
    s = system_for(mesh, handle_nodes=[0, 5])
    T, _ = assemble_metric_tensors(mesh)
    assert s.n_c == T.n_rows + len(mesh.boundary_edges) + 6
    assert np.all(s.tolerance_refs > 0)


def test_rest_is_zero():
    for mesh in sample_meshes()[:4]:
        s = system_for(mesh)
        assert np.abs(s.values(stack(mesh.rest_positions))).max() <= 1e-12
        assert s.relative_residual(s.values(stack(mesh.rest_positions))) <= 1e-12


def test_scaling_triples():
    mesh = grid3()
    s = system_for(mesh)
    C = s.values(2 * stack(mesh.rest_positions))
    nq = s.n_quadratic
    rest = s.C0
    metric = [r for r, (_, t) in enumerate(s.labels) if t in ("E", "G")]
    np.testing.assert_allclose(C[metric], 3 * rest[metric], rtol=1e-12)
    edges = [r for r, (_, t) in enumerate(s.labels) if t == "edge"]
    np.testing.assert_allclose(C[edges], 3 * rest[edges], rtol=1e-12)
    assert len(edges) == 8 and nq == len(s.labels)


@pytest.mark.parametrize("mesh", sample_meshes(), ids=lambda m: f"n{m.n}")
def test_rigid_invariance(mesh):
    rng = np.random.default_rng(mesh.n)
    s = system_for(mesh)
    P = mesh.rest_positions
    for _ in range(5):
        R, b = random_rigid(rng)
        C = s.values(stack(P @ R.T + b))
        assert np.abs(C).max() <= 1e-10 * np.abs(s.C0[: len(s.labels)]).max()


def fd_jacobian(s, phi, h=1e-6):
    cols = []
    for c in range(len(phi)):
        e = np.zeros_like(phi)
        e[c] = h
        cols.append((s.values(phi + e) - s.values(phi - e)) / (2 * h))
    return np.column_stack(cols)


def test_jacobian_fd():
    mesh = with_noise(grid(5, 5), 0.02, seed=3)
    s = system_for(mesh, handle_nodes=[0, 4])
    rng = np.random.default_rng(0)
    phi = stack(mesh.rest_positions) + rng.normal(scale=0.01, size=3 * mesh.n)
    J = s.jacobian(phi).toarray()
    F = fd_jacobian(s, phi)
    assert np.abs(J - F).max() / np.abs(J).max() <= 1e-5
    # sparsity: analytic pattern covers every FD non-zero
    assert np.all((np.abs(F) > 1e-8) <= (J != 0))


def test_edge_row_gradient():
    mesh = grid3()
    s = system_for(mesh)
    phi = stack(mesh.rest_positions) + 0.01 * np.random.default_rng(1).normal(size=27)
    X = unstack(phi)
    J = s.jacobian(phi).toarray()
    for r, (key, t) in enumerate(s.labels):
        if t != "edge":
            continue
        a, b = key
        g = np.zeros((mesh.n, 3))
        g[a] = 2 * (X[a] - X[b])
        g[b] = 2 * (X[b] - X[a])
        np.testing.assert_allclose(J[r], stack(g), atol=1e-14)


def test_infinitesimal_rigid_motions():
    mesh = jittered_triangles(6, 6, seed=5)
    s = system_for(mesh)
    P = mesh.rest_positions
    J = s.jacobian(stack(P))
    rng = np.random.default_rng(2)
    for _ in range(5):
        w, b = rng.normal(size=3), rng.normal(size=3)
        V = np.cross(w, P) + b
        assert np.abs(J @ stack(V)).max() <= 1e-9


def test_relative_residual_examples():
    mesh = grid3()
    s = system_for(mesh)
    assert relative_residual(s, np.zeros(s.n_c)) == 0
    C = np.zeros(s.n_c)
    r = next(r for r, (_, t) in enumerate(s.labels) if t == "edge")
    C[r] = 0.001 * s.C0[r]
    assert np.isclose(s.relative_residual(C), 0.001)


def test_handle_rows():
    mesh = grid3()
    s = system_for(mesh, handle_nodes=[2], targets=[[1.0, 0.5, 0.25]])
    phi = stack(mesh.rest_positions)
    C = eval_constraints(s, phi)
    np.testing.assert_allclose(C[-3:], [0.0, -0.5, -0.25])
    J = eval_jacobian(s, phi).toarray()
    np.testing.assert_array_equal(J[-3:, s.handle_columns()], np.eye(3))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_translation_rotation_and_shortcut(seed):
    mesh = with_noise(jittered_triangles(5, 6, seed=seed % 20), 0.01, seed)
    s = system_for(mesh)
    rng = np.random.default_rng(seed)
    phi = stack(mesh.rest_positions) + rng.normal(scale=0.05, size=3 * mesh.n)
    X = unstack(phi)
    b = rng.normal(size=3)
    C, J = s.values(phi), s.jacobian(phi)
    np.testing.assert_allclose(s.values(stack(X + b)), C, atol=1e-11)
    assert abs(s.jacobian(stack(X + b)) - J).max() < 1e-11
    R = Rotation.random(random_state=rng).as_matrix()
    np.testing.assert_allclose(s.values(stack(X @ R.T)), C, atol=1e-11)
    # 1/2 J phi - C0 equals direct contraction T (x) P - C0
    T, rest = assemble_metric_tensors(mesh)
    direct = T.contract(X) - rest.metric
    np.testing.assert_allclose(C[: T.n_rows], direct, atol=1e-12)
