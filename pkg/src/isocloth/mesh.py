"""Surface meshes of mixed triangles and bilinear quads.

Nodes are stored as an ``(n, 3)`` array. Stacked position vectors use the
block layout ``(x_1..x_n | y_1..y_n | z_1..z_n)``; :func:`stack` and
:func:`unstack` convert between the two.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CORNER_ANGLE_TOL = np.deg2rad(30.0)


class MeshError(ValueError):
    """Malformed mesh file, bad topology or degenerate geometry."""


def stack(X: np.ndarray) -> np.ndarray:
    return np.asarray(X, dtype=float).ravel(order="F")


def unstack(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    return phi.reshape(3, -1).T


# ---------------------------------------------------------------------------
# Reference elements
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ElementKind:
    name: str
    shape_count: int
    reference_corners: tuple

    @property
    def reference_area(self) -> float:
        return 4.0 if self.name == "quad" else 0.5


TRIANGLE = ElementKind("triangle", 3, ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0)))
QUAD = ElementKind("quad", 4, ((-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)))


def kind_for(size: int) -> ElementKind:
    if size == 3:
        return TRIANGLE
    if size == 4:
        return QUAD
    raise MeshError(f"elements must have 3 or 4 nodes, got {size}")


def shape_functions(kind: ElementKind, xi, eta):
    """Shape function values and reference gradients.

    ``xi`` and ``eta`` may be scalars or equally shaped arrays. Returns
    ``values`` with shape ``(shape_count, ...)`` and ``gradients`` with
    shape ``(shape_count, 2, ...)`` holding ``(dN/dxi, dN/deta)``.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if kind.name == "quad":
        sx = np.array([-1.0, 1.0, 1.0, -1.0])
        sy = np.array([-1.0, -1.0, 1.0, 1.0])
        ex = sx.reshape((4,) + (1,) * xi.ndim)
        ey = sy.reshape((4,) + (1,) * xi.ndim)
        a = 1.0 + ex * xi
        b = 1.0 + ey * eta
        values = 0.25 * a * b
        gradients = np.stack([0.25 * ex * b, 0.25 * a * ey], axis=1)
        return values, gradients
    ones = np.ones_like(xi)
    values = np.stack([1.0 - xi - eta, xi, eta])
    gradients = np.stack(
        [
            np.stack([-ones, -ones]),
            np.stack([ones, 0 * ones]),
            np.stack([0 * ones, ones]),
        ]
    )
    return values, gradients


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (q, 2)
    weights: np.ndarray  # (q,)


def reference_quadrature(kind: ElementKind) -> QuadratureRule:
    """3x3 Gauss-Legendre on the square, 3-point symmetric rule on the triangle."""
    if kind.name == "quad":
        g, w = np.polynomial.legendre.leggauss(3)
        xi, eta = np.meshgrid(g, g, indexing="xy")
        weights = np.outer(w, w)
        return QuadratureRule(np.column_stack([xi.ravel(), eta.ravel()]), weights.ravel())
    pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
    return QuadratureRule(pts, np.full(3, 1 / 6))


@dataclass(frozen=True)
class _Tabulated:
    """Shape functions evaluated at a rule's quadrature points."""

    kind: ElementKind
    rule: QuadratureRule
    N: np.ndarray  # (q, m)
    dN: np.ndarray  # (q, m, 2)


def tabulate(kind: ElementKind) -> _Tabulated:
    rule = reference_quadrature(kind)
    values, grads = shape_functions(kind, rule.points[:, 0], rule.points[:, 1])
    return _Tabulated(kind, rule, values.T.copy(), np.transpose(grads, (2, 0, 1)).copy())


# ---------------------------------------------------------------------------
# Mesh
# ---------------------------------------------------------------------------


@dataclass
class Mesh:
    nodes: np.ndarray
    elements: list
    boundary_edges: list = field(default_factory=list)
    corner_nodes: frozenset = frozenset()
    interior_nodes: frozenset = frozenset()
    rest_positions: np.ndarray = None

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def boundary_nodes(self) -> frozenset:
        return frozenset(int(v) for e in self.boundary_edges for v in e)

    def groups(self):
        """Yield ``(kind, element_ids, connectivity)`` per element kind in file order."""
        for size in (3, 4):
            ids = [e for e, conn in enumerate(self.elements) if len(conn) == size]
            if ids:
                conn = np.array([self.elements[e] for e in ids], dtype=np.int64)
                yield kind_for(size), np.array(ids), conn

    def triangles(self) -> np.ndarray:
        """All elements as triangles, quads split along their shorter rest diagonal."""
        tris = []
        P = self.rest_positions
        for conn in self.elements:
            if len(conn) == 3:
                tris.append(tuple(conn))
                continue
            a, b, c, d = conn
            if np.linalg.norm(P[a] - P[c]) <= np.linalg.norm(P[b] - P[d]):
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
        return np.array(tris, dtype=np.int64).reshape(-1, 3)

    def copy(self) -> "Mesh":
        return Mesh(
            self.nodes.copy(),
            list(self.elements),
            list(self.boundary_edges),
            self.corner_nodes,
            self.interior_nodes,
            self.rest_positions.copy(),
        )


def build_mesh(nodes, elements, corners=None) -> Mesh:
    """Validate raw arrays and classify the topology.

    ``corners`` overrides the angle-based corner detection when given.
    """
    nodes = np.array(nodes, dtype=float)
    if nodes.ndim != 2 or nodes.shape[1] != 3:
        raise MeshError("nodes must be an (n, 3) array")
    n = len(nodes)
    if n < 3:
        raise MeshError(f"need at least 3 nodes, got {n}")
    if not np.all(np.isfinite(nodes)):
        raise MeshError("non-finite node coordinates")
    elements = [tuple(int(v) for v in conn) for conn in elements]
    if not elements:
        raise MeshError("mesh has no elements")

    directed = {}
    for e, conn in enumerate(elements):
        kind_for(len(conn))
        if min(conn) < 0 or max(conn) >= n:
            raise MeshError(f"element {e} references a node outside 0..{n - 1}")
        if len(set(conn)) != len(conn):
            raise MeshError(f"element {e} repeats a node")
        for a, b in zip(conn, conn[1:] + conn[:1]):
            if (a, b) in directed:
                raise MeshError(
                    f"inconsistent orientation: edge ({a}, {b}) traversed twice in the same direction"
                )
            directed[(a, b)] = e

    undirected = {}
    for a, b in directed:
        undirected.setdefault((min(a, b), max(a, b)), []).append((a, b))
    boundary = []
    for key, uses in undirected.items():
        if len(uses) > 2:
            raise MeshError(f"non-manifold edge {key} shared by {len(uses)} elements")
        if len(uses) == 1:
            boundary.append(uses[0])
    boundary.sort(key=lambda ab: (directed[ab], ab))

    used = np.zeros(n, dtype=bool)
    for conn in elements:
        used[list(conn)] = True
    if not used.all():
        raise MeshError(f"node {int(np.argmin(used))} is not referenced by any element")

    mesh = Mesh(nodes, elements, [tuple(e) for e in boundary], rest_positions=nodes.copy())
    bnodes = mesh.boundary_nodes
    mesh.interior_nodes = frozenset(range(n)) - bnodes
    if corners is None:
        mesh.corner_nodes = _detect_corners(nodes, boundary)
    else:
        corners = frozenset(int(c) for c in corners)
        if not corners <= bnodes:
            raise MeshError("explicit corners must be boundary nodes")
        mesh.corner_nodes = corners
    _check_rest_geometry(mesh)
    return mesh


def _detect_corners(nodes, boundary) -> frozenset:
    nbrs = {}
    for a, b in boundary:
        nbrs.setdefault(a, []).append(b)
        nbrs.setdefault(b, []).append(a)
    corners = set()
    for v, adj in nbrs.items():
        if len(adj) != 2:
            corners.add(v)
            continue
        u = nodes[adj[0]] - nodes[v]
        w = nodes[adj[1]] - nodes[v]
        c = np.dot(u, w) / (np.linalg.norm(u) * np.linalg.norm(w))
        angle = np.arccos(np.clip(c, -1.0, 1.0))
        if abs(np.pi - angle) > CORNER_ANGLE_TOL:
            corners.add(v)
    return frozenset(corners)


def _check_rest_geometry(mesh: Mesh) -> None:
    for kind, ids, conn in mesh.groups():
        tab = tabulate(kind)
        P = mesh.rest_positions[conn]  # (ne, m, 3)
        t = np.einsum("qma,emc->eqac", tab.dN, P)
        E = np.einsum("eqc,eqc->eq", t[:, :, 0], t[:, :, 0])
        F = np.einsum("eqc,eqc->eq", t[:, :, 0], t[:, :, 1])
        G = np.einsum("eqc,eqc->eq", t[:, :, 1], t[:, :, 1])
        det = E * G - F**2
        scale = np.maximum(E, G) ** 2
        bad = det <= 1e-14 * scale
        if bad.any():
            e = int(ids[np.argmax(bad.any(axis=1))])
            raise MeshError(f"element {e} is degenerate at rest (zero area element)")


def element_map(mesh: Mesh, element: int, positions, point):
    """Position and tangents ``(phi_xi, phi_eta)`` of an element at a reference point.

    ``positions`` is a stacked 3n vector or an ``(n, 3)`` array.
    """
    X = _as_points(positions, mesh.n)
    conn = list(mesh.elements[element])
    kind = kind_for(len(conn))
    N, dN = shape_functions(kind, point[0], point[1])
    P = X[conn]
    return N @ P, dN[:, 0] @ P, dN[:, 1] @ P


def _as_points(positions, n: int) -> np.ndarray:
    positions = np.asarray(positions, dtype=float)
    if positions.ndim == 1:
        if positions.size != 3 * n:
            raise ValueError(f"expected {3 * n} stacked coordinates, got {positions.size}")
        return unstack(positions)
    if positions.shape != (n, 3):
        raise ValueError(f"expected positions of shape ({n}, 3), got {positions.shape}")
    return positions


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------


def parse_mesh(text: str, corners=None, source: str = "<string>") -> Mesh:
    nodes, elements = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tag, *rest = line.split()
        try:
            if tag == "v" and len(rest) == 3:
                nodes.append([float(x) for x in rest])
            elif tag == "f" and len(rest) in (3, 4):
                elements.append([int(i) - 1 for i in rest])
            else:
                raise ValueError
        except ValueError:
            raise MeshError(f"{source}:{lineno}: cannot parse {raw!r}") from None
    return build_mesh(nodes, elements, corners=corners)


def load_mesh(path, corners=None) -> Mesh:
    path = Path(path)
    return parse_mesh(path.read_text(), corners=corners, source=str(path))


def format_mesh(mesh: Mesh) -> str:
    lines = [f"# {mesh.n} nodes, {len(mesh.elements)} elements"]
    lines += ["v " + " ".join(repr(float(c)) for c in p) for p in mesh.nodes]
    lines += ["f " + " ".join(str(i + 1) for i in conn) for conn in mesh.elements]
    return "\n".join(lines) + "\n"


def save_mesh(mesh: Mesh, path) -> None:
    Path(path).write_text(format_mesh(mesh))
