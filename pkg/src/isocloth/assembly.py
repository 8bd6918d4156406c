"""One-time assembly of the lumped mass, metric tensors and bending operator.

Everything here is evaluated on the rest geometry and never changes during
a simulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, MeshError, tabulate

METRIC_TYPES = ("E", "F", "G")


class AssemblyError(MeshError):
    pass


@dataclass(frozen=True)
class LumpedMass:
    """Per-node area weights ``m_k`` (m^2), the diagonal of the lumped mass matrix."""

    m: np.ndarray

    @property
    def n(self) -> int:
        return len(self.m)

    @property
    def diagonal(self) -> np.ndarray:
        """Diagonal of the 3n x 3n block matrix acting on stacked positions."""
        return np.tile(self.m, 3)

    @property
    def total(self) -> float:
        return float(self.m.sum())


@dataclass(frozen=True)
class MetricTensors:
    """Sparse 3-tensor ``T[r, i, j]`` stored as sorted coordinate arrays.

    Each row ``r`` is a symmetric matrix over node pairs tagged with the node
    ``k`` it discretizes and the metric coefficient type.
    """

    n: int
    labels: tuple  # ((k, "E"|"F"|"G"), ...)
    row: np.ndarray
    i: np.ndarray
    j: np.ndarray
    val: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    @property
    def nnz(self) -> int:
        return len(self.val)

    @property
    def row_index(self) -> dict:
        return {lab: r for r, lab in enumerate(self.labels)}

    def contract(self, X) -> np.ndarray:
        """``T (x) P`` with ``P_ij = <p_i, p_j>`` without forming ``P``."""
        X = np.asarray(X, dtype=float)
        dots = np.einsum("ec,ec->e", X[self.i], X[self.j])
        return np.bincount(self.row, weights=self.val * dots, minlength=self.n_rows)

    def row_matrix(self, r: int) -> sp.csr_matrix:
        sel = self.row == r
        return sp.csr_matrix((self.val[sel], (self.i[sel], self.j[sel])), shape=(self.n, self.n))


@dataclass(frozen=True)
class RestValues:
    metric: np.ndarray
    edges: np.ndarray  # rest squared lengths of boundary edges

    @property
    def C0(self) -> np.ndarray:
        return np.concatenate([self.metric, self.edges])


@dataclass(frozen=True)
class BendingOperator:
    """``L`` maps positions to per-hinge curvature vectors; ``K`` is the stiffness."""

    L: sp.csr_matrix
    K: sp.csr_matrix


def _rest_frames(mesh: Mesh, conn: np.ndarray, tab):
    P = mesh.rest_positions[conn]
    t = np.einsum("qma,emc->eqac", tab.dN, P)  # (ne, q, 2, 3) tangents
    E = np.einsum("eqc,eqc->eq", t[:, :, 0], t[:, :, 0])
    F = np.einsum("eqc,eqc->eq", t[:, :, 0], t[:, :, 1])
    G = np.einsum("eqc,eqc->eq", t[:, :, 1], t[:, :, 1])
    det = E * G - F**2
    return E, F, G, det


def _area_weights(mesh: Mesh, ids, conn, tab) -> np.ndarray:
    E, F, G, det = _rest_frames(mesh, conn, tab)
    bad = det <= 1e-14 * np.maximum(E, G) ** 2
    if bad.any():
        e = int(ids[np.argmax(bad.any(axis=1))])
        raise AssemblyError(f"non-positive metric determinant in element {e}")
    return np.sqrt(np.abs(det)) * tab.rule.weights


def assemble_lumped_mass(mesh: Mesh) -> LumpedMass:
    m = np.zeros(mesh.n)
    for kind, ids, conn in mesh.groups():
        tab = tabulate(kind)
        dA = _area_weights(mesh, ids, conn, tab)  # (ne, q)
        local = np.einsum("qk,qj,eq->ekj", tab.N, tab.N, dA)
        np.add.at(m, conn.ravel(), local.sum(axis=2).ravel())
    if np.any(m <= 0):
        raise AssemblyError("non-positive lumped mass")
    return LumpedMass(m)


def metric_row_nodes(mesh: Mesh) -> dict:
    interior = sorted(mesh.interior_nodes)
    return {
        "E": interior,
        "F": sorted(mesh.interior_nodes | mesh.corner_nodes),
        "G": interior,
    }


def _local_tensors(mesh: Mesh, ids, conn, kind):
    tab = tabulate(kind)
    dA = _area_weights(mesh, ids, conn, tab)
    Nk, dx, dy = tab.N, tab.dN[:, :, 0], tab.dN[:, :, 1]
    tE = np.einsum("qk,qi,qj,eq->ekij", Nk, dx, dx, dA)
    tF = 0.5 * (
        np.einsum("qk,qi,qj,eq->ekij", Nk, dx, dy, dA)
        + np.einsum("qk,qi,qj,eq->ekij", Nk, dy, dx, dA)
    )
    tG = np.einsum("qk,qi,qj,eq->ekij", Nk, dy, dy, dA)
    return {"E": tE, "F": tF, "G": tG}


def full_metric_tensors(mesh: Mesh, mass: LumpedMass, nodes_by_type: dict) -> MetricTensors:
    """Assemble tensor rows for arbitrary node sets per coefficient type."""
    n = mesh.n
    labels = []
    row_of = {}
    for typ in METRIC_TYPES:
        lookup = np.full(n, -1, dtype=np.int64)
        for k in nodes_by_type[typ]:
            lookup[k] = len(labels)
            labels.append((int(k), typ))
        row_of[typ] = lookup

    rows, cols, vals = [], [], []
    for kind, ids, conn in mesh.groups():
        local = _local_tensors(mesh, ids, conn, kind)
        m = conn.shape[1]
        K = np.broadcast_to(conn[:, :, None, None], (len(conn), m, m, m))
        I = np.broadcast_to(conn[:, None, :, None], K.shape)
        J = np.broadcast_to(conn[:, None, None, :], K.shape)
        for typ in METRIC_TYPES:
            r = row_of[typ][K]
            keep = r >= 0
            rows.append(r[keep])
            cols.append(I[keep] * n + J[keep])
            vals.append(local[typ][keep] / mass.m[K[keep]])

    R = len(labels)
    coo = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(R, n * n),
    )
    T = coo.tocsr()
    T.sum_duplicates()
    T.eliminate_zeros()
    T.sort_indices()
    row = np.repeat(np.arange(R), np.diff(T.indptr))
    return MetricTensors(n, tuple(labels), row, T.indices // n, T.indices % n, T.data.copy())


def assemble_metric_tensors(mesh: Mesh, mass: LumpedMass | None = None):
    """Tensor rows for interior E/G and interior-plus-corner F, with rest values."""
    if mass is None:
        mass = assemble_lumped_mass(mesh)
    tensors = full_metric_tensors(mesh, mass, metric_row_nodes(mesh))
    P = mesh.rest_positions
    edges = np.array(mesh.boundary_edges, dtype=np.int64).reshape(-1, 2)
    lengths2 = np.sum((P[edges[:, 0]] - P[edges[:, 1]]) ** 2, axis=1)
    return tensors, RestValues(tensors.contract(P), lengths2)


def cotangent_weights(P: np.ndarray, tris: np.ndarray, n: int) -> sp.csr_matrix:
    """Symmetric positive semi-definite cotangent matrix ``W`` (W @ 1 = 0)."""
    rows, cols, vals = [], [], []
    for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        # angle at vertex a is opposite edge (b, c)
        u = P[tris[:, b]] - P[tris[:, a]]
        v = P[tris[:, c]] - P[tris[:, a]]
        cot = np.einsum("ec,ec->e", u, v) / np.linalg.norm(np.cross(u, v), axis=1)
        w = 0.5 * cot
        ib, ic = tris[:, b], tris[:, c]
        rows += [ib, ic, ib, ic]
        cols += [ic, ib, ib, ic]
        vals += [-w, -w, w, w]
    W = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    W.sum_duplicates()
    return W


def _cot(P, apex, p, q):
    u, v = P[p] - P[apex], P[q] - P[apex]
    return np.einsum("ec,ec->e", u, v) / np.linalg.norm(np.cross(u, v), axis=1)


def interior_hinges(tris: np.ndarray) -> np.ndarray:
    """``(a, b, c, d)`` for every edge ``ab`` shared by triangles ``abc`` and ``bad``."""
    half = {}
    for t, (i, j, k) in enumerate(tris):
        for a, b, c in ((i, j, k), (j, k, i), (k, i, j)):
            half[(a, b)] = c
    hinges = [(a, b, c, half[(b, a)]) for (a, b), c in half.items() if a < b and (b, a) in half]
    return np.array(sorted(hinges), dtype=np.int64).reshape(-1, 4)


def assemble_bending(mesh: Mesh, mass: LumpedMass | None = None) -> BendingOperator:
    """Hinge Laplacian ``L`` (one row per interior edge) and ``K = L^T A L``.

    Row ``e`` holds the rest-cotangent stencil of the edge's two triangles,
    divided by the hinge area ``a_e = A_1 + A_2``; ``A = diag(a_e)``, so
    ``x^T K x`` approximates the integral of ``|Laplacian x|^2``. Each stencil
    annihilates affine fields of the rest plane, so flat sheets carry no
    bending energy, and edges touching the boundary still bend.
    """
    P = mesh.rest_positions
    tris = mesh.triangles()
    h = interior_hinges(tris)
    n = mesh.n
    if len(h) == 0:
        return BendingOperator(sp.csr_matrix((0, n)), sp.csr_matrix((n, n)))
    a, b, c, d = h.T
    cot_a1, cot_b1 = _cot(P, a, b, c), _cot(P, b, c, a)
    cot_a2, cot_b2 = _cot(P, a, d, b), _cot(P, b, a, d)
    k = np.column_stack([-(cot_b1 + cot_b2), -(cot_a1 + cot_a2), cot_a1 + cot_b1, cot_a2 + cot_b2])
    area = 0.5 * (np.linalg.norm(np.cross(P[b] - P[a], P[c] - P[a]), axis=1)
                  + np.linalg.norm(np.cross(P[d] - P[a], P[b] - P[a]), axis=1))
    rows = np.repeat(np.arange(len(h)), 4)
    L = sp.csr_matrix(((k / area[:, None]).ravel(), (rows, h.ravel())), shape=(len(h), n))
    L.sum_duplicates()
    K = (L.T @ sp.diags(area) @ L).tocsr()
    K = (0.5 * (K + K.T)).tocsr()
    K.sum_duplicates()
    return BendingOperator(L, K)


def dump_triplets(path, tensors: MetricTensors, bending: BendingOperator | None = None) -> None:
    """Plain-text debug dump: ``k i j value`` tensor lines then ``row col value`` for K."""
    with open(path, "w") as fh:
        fh.write("# tensor: k type i j value\n")
        for r, i, j, v in zip(tensors.row, tensors.i, tensors.j, tensors.val):
            k, typ = tensors.labels[r]
            fh.write(f"{k} {typ} {int(i)} {int(j)} {float(v)!r}\n")
        if bending is not None:
            fh.write("# stiffness: row col value\n")
            K = bending.K.tocoo()
            for r, c, v in zip(K.row, K.col, K.data):
                fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
