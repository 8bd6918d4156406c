"""Constraint vector ``C(phi)`` and its sparse Jacobian.

Metric-tensor rows and boundary-edge rows are both quadratic forms
``sum_ij T[r, i, j] <p_i, p_j> - C0[r]``; handle rows are linear
``p_h - target``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .assembly import (
    LumpedMass,
    assemble_lumped_mass,
    assemble_metric_tensors,
    full_metric_tensors,
)
from .mesh import Mesh, unstack


class ConstraintSystem:
    """Quadratic metric/edge rows followed by three linear rows per handle node.

    ``targets`` holds the prescribed handle positions and may be reassigned
    between steps; everything else is fixed at construction.
    """

    def __init__(self, n, row, i, j, val, C0, refs, labels=(), handle_nodes=(), targets=None):
        self.n = int(n)
        self.n_quadratic = len(C0)
        self.labels = tuple(labels)
        self.C0 = np.asarray(C0, dtype=float)
        self.handle_nodes = np.asarray(handle_nodes, dtype=np.int64).reshape(-1)
        if targets is None:
            targets = np.zeros((len(self.handle_nodes), 3))
        self.targets = np.asarray(targets, dtype=float).reshape(-1, 3)
        nh = len(self.handle_nodes)
        self.tolerance_refs = np.concatenate([np.asarray(refs, dtype=float), np.ones(3 * nh)])
        if np.any(self.tolerance_refs <= 0):
            raise ValueError("tolerance normalizers must be positive")

        row = np.asarray(row, dtype=np.int64)
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        key = row * self.n + i
        uniq, u = np.unique(key, return_inverse=True)
        self._ru = uniq // self.n
        self._iu = uniq % self.n
        self._S = sp.csr_matrix((np.asarray(val, float), (u, j)), shape=(len(uniq), self.n))
        self._S.sum_duplicates()

        nu, n = len(uniq), self.n
        rows = [self._ru] * 3
        cols = [self._iu + c * n for c in range(3)]
        hr = self.n_quadratic + np.arange(3 * nh)
        hc = (np.arange(3)[None, :] * n + self.handle_nodes[:, None]).ravel()
        rows.append(hr)
        cols.append(hc)
        order = sp.coo_matrix(
            (np.arange(3 * nu + 3 * nh, dtype=float) + 1, (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_c, 3 * n),
        ).tocsr()
        order.sort_indices()
        self._perm = order.data.astype(np.int64) - 1
        self._indptr = order.indptr
        self._indices = order.indices
        self._nu = nu

    @property
    def n_c(self) -> int:
        return self.n_quadratic + 3 * len(self.handle_nodes)

    @property
    def n_handles(self) -> int:
        return len(self.handle_nodes)

    def handle_columns(self) -> np.ndarray:
        return (np.arange(3)[None, :] * self.n + self.handle_nodes[:, None]).ravel()

    @classmethod
    def from_mesh(cls, mesh: Mesh, mass: LumpedMass | None = None, handle_nodes=(), targets=None):
        if mass is None:
            mass = assemble_lumped_mass(mesh)
        tensors, rest = assemble_metric_tensors(mesh, mass)
        edges = np.array(mesh.boundary_edges, dtype=np.int64).reshape(-1, 2)
        R = tensors.n_rows
        er = R + np.repeat(np.arange(len(edges)), 4)
        a, b = edges[:, 0], edges[:, 1]
        ei = np.column_stack([a, a, b, b]).ravel()
        ej = np.column_stack([a, b, a, b]).ravel()
        ev = np.tile([1.0, -1.0, -1.0, 1.0], len(edges))

        # metric rows are normalized by E_k(0) + G_k(0) of their node
        P = mesh.rest_positions
        k_nodes = sorted({k for k, _ in tensors.labels})
        eg = full_metric_tensors(mesh, mass, {"E": k_nodes, "F": [], "G": k_nodes})
        eg_vals = eg.contract(P)
        scale = {}
        for (k, _), v in zip(eg.labels, eg_vals):
            scale[k] = scale.get(k, 0.0) + v
        refs = [scale[k] for k, _ in tensors.labels] + list(rest.edges)

        labels = list(tensors.labels) + [(tuple(map(int, e)), "edge") for e in edges]
        handle_nodes = np.asarray(handle_nodes, dtype=np.int64).reshape(-1)
        if targets is None:
            targets = P[handle_nodes]
        return cls(
            mesh.n,
            np.concatenate([tensors.row, er]),
            np.concatenate([tensors.i, ei]),
            np.concatenate([tensors.j, ej]),
            np.concatenate([tensors.val, ev]),
            rest.C0,
            refs,
            labels,
            handle_nodes,
            targets,
        )

    @classmethod
    def empty(cls, n: int, handle_nodes=(), targets=None):
        z = np.zeros(0, dtype=np.int64)
        return cls(n, z, z, z, np.zeros(0), np.zeros(0), np.zeros(0), (), handle_nodes, targets)

    # -- evaluation ---------------------------------------------------------

    def jacobian(self, phi) -> sp.csr_matrix:
        X = unstack(phi)
        SX = 2.0 * (self._S @ X)  # (nu, 3)
        flat = np.concatenate([SX.T.ravel(), np.ones(3 * self.n_handles)])
        return sp.csr_matrix(
            (flat[self._perm], self._indices, self._indptr), shape=(self.n_c, 3 * self.n)
        )

    def values(self, phi, jacobian=None) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if jacobian is None:
            jacobian = self.jacobian(phi)
        nq = self.n_quadratic
        quad = 0.5 * (jacobian[:nq] @ phi) - self.C0
        hand = phi[self.handle_columns()] - self.targets.ravel()
        return np.concatenate([quad, hand])

    def relative_residual(self, values) -> float:
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            return 0.0
        return float(np.max(np.abs(values) / self.tolerance_refs))


def eval_jacobian(system: ConstraintSystem, phi) -> sp.csr_matrix:
    return system.jacobian(phi)


def eval_constraints(system: ConstraintSystem, phi, jacobian=None) -> np.ndarray:
    return system.values(phi, jacobian)


def relative_residual(system: ConstraintSystem, values) -> float:
    return system.relative_residual(values)
