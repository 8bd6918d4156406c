"""Built-in meshes for the benchmark scenarios.

Grids, jittered triangulations, annuli and a two-panel tube stand in for
the meshes of the original experiments.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import Delaunay

from .mesh import Mesh, build_mesh

_PLANES = {"xy": (0, 1, 2), "xz": (0, 2, 1), "yz": (1, 2, 0)}


def _embed(u, v, plane, origin):
    a, b, c = _PLANES[plane]
    P = np.zeros((len(u), 3))
    P[:, a] = u
    P[:, b] = v
    return P + np.asarray(origin, dtype=float)


def grid(nx: int, ny: int, width: float = 1.0, height: float = 1.0, plane: str = "xy",
         origin=(0.0, 0.0, 0.0), triangles: bool = False) -> Mesh:
    """``nx`` by ``ny`` nodes on a ``width`` x ``height`` rectangle.

    Node ``r * nx + c`` sits at column ``c`` and row ``r``; row 0 is at
    ``v = 0``.
    """
    if nx < 2 or ny < 2:
        raise ValueError("grid needs at least 2 nodes per side")
    u, v = np.meshgrid(np.linspace(0, width, nx), np.linspace(0, height, ny))
    nodes = _embed(u.ravel(), v.ravel(), plane, origin)
    elements = []
    for r in range(ny - 1):
        for c in range(nx - 1):
            a = r * nx + c
            quad = (a, a + 1, a + 1 + nx, a + nx)
            if triangles:
                elements += [(quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])]
            else:
                elements.append(quad)
    return build_mesh(nodes, elements)


def jittered_triangles(nx: int, ny: int, width: float = 1.0, height: float = 1.0, jitter: float = 0.3,
                       seed: int = 0, plane: str = "xy", origin=(0.0, 0.0, 0.0)) -> Mesh:
    """Irregular Delaunay triangulation of a jittered ``nx`` x ``ny`` point set.

    Interior points move by up to ``jitter`` times the spacing; boundary
    points slide along their side only, corners stay put.
    """
    rng = np.random.default_rng(seed)
    hx, hy = width / (nx - 1), height / (ny - 1)
    u, v = np.meshgrid(np.linspace(0, width, nx), np.linspace(0, height, ny))
    u, v = u.ravel().copy(), v.ravel().copy()
    du = rng.uniform(-jitter, jitter, u.size) * hx
    dv = rng.uniform(-jitter, jitter, v.size) * hy
    on_x = np.isclose(u, 0) | np.isclose(u, width)
    on_y = np.isclose(v, 0) | np.isclose(v, height)
    u += np.where(on_x, 0.0, du)
    v += np.where(on_y, 0.0, dv)
    tri = Delaunay(np.column_stack([u, v]))
    simplices = tri.simplices.copy()
    a, b, c = (np.column_stack([u, v])[simplices[:, k]] for k in range(3))
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    simplices[cross < 0] = simplices[cross < 0][:, ::-1]
    # drop slivers Delaunay may put along straight boundaries
    area = 0.5 * np.abs(cross)
    simplices = simplices[area > 1e-6 * hx * hy]
    order = np.lexsort((simplices[:, 0],))
    return build_mesh(_embed(u, v, plane, origin), simplices[order].tolist())


def annulus(inner: float, outer: float, rings: int, sectors: int, center=(0.0, 0.0, 0.0)) -> Mesh:
    """Quadrangulated flat ring with ``rings`` node circles of ``sectors`` nodes.

    Ring 0 is the inner rim, so nodes ``0..sectors-1`` are the inner nodes.
    """
    if rings < 2 or sectors < 3:
        raise ValueError("annulus needs at least 2 rings and 3 sectors")
    radii = np.linspace(inner, outer, rings)
    theta = 2 * np.pi * np.arange(sectors) / sectors
    R, T = np.meshgrid(radii, theta, indexing="ij")
    nodes = np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel(), np.zeros(R.size)])
    nodes += np.asarray(center, dtype=float)
    elements = []
    for r in range(rings - 1):
        for s in range(sectors):
            a, b = r * sectors + s, r * sectors + (s + 1) % sectors
            elements.append((a, b, b + sectors, a + sectors))
    return build_mesh(nodes, elements)


def annulus_for_nodes(target: int, inner: float = 0.09, outer: float = 0.15) -> Mesh:
    """Annulus with roughly ``target`` nodes and near-square elements."""
    return annulus(inner, outer, *_ring_layout(target, inner, outer))


def annulus_triangles(target: int, inner: float = 0.09, outer: float = 0.15, jitter: float = 0.25,
                      seed: int = 0) -> Mesh:
    """Triangulated ring with roughly ``target`` nodes.

    Odd rings are rotated by half a sector so every strip between two rings
    is a zigzag of near-equilateral triangles. Interior rings are jittered in
    radius and angle by up to ``jitter`` of half a spacing; the inner rim and
    the outer edge stay on their circles.
    """
    rings, sectors = _ring_layout(target, inner, outer)
    rng = np.random.default_rng(seed)
    dr, dth = (outer - inner) / (rings - 1), 2 * np.pi / sectors
    s = np.arange(sectors)
    nodes, elements = [], []
    for r in range(rings):
        theta = (s + 0.5 * (r % 2)) * dth
        radius = np.full(sectors, inner + r * dr)
        if 0 < r < rings - 1:
            theta = theta + jitter * 0.5 * dth * rng.uniform(-1, 1, sectors)
            radius = radius + jitter * 0.5 * dr * rng.uniform(-1, 1, sectors)
        nodes.append(np.column_stack([radius * np.cos(theta), radius * np.sin(theta), np.zeros(sectors)]))
    for r in range(rings - 1):
        a, a1 = r * sectors + s, r * sectors + (s + 1) % sectors
        b, b1 = a + sectors, a1 + sectors
        if r % 2 == 0:  # outer node b sits between a and a1
            tris = [np.column_stack([a, a1, b]), np.column_stack([a1, b1, b])]
        else:  # inner node a sits between b and b1
            tris = [np.column_stack([a, a1, b1]), np.column_stack([a, b1, b])]
        elements.extend(np.vstack(tris).tolist())
    return build_mesh(np.vstack(nodes), [tuple(e) for e in elements])


def _ring_layout(target: int, inner: float, outer: float) -> tuple:
    """``(rings, sectors)`` with about ``target`` nodes and square-ish cells."""
    mid = np.pi * (inner + outer)
    best = None
    for rings in range(3, 40):
        sectors = int(round(target / rings))
        if sectors < 8:
            break
        aspect = ((outer - inner) / (rings - 1)) / (mid / sectors)
        score = abs(np.log(aspect)) + 4 * abs(rings * sectors - target) / target
        if best is None or score < best[0]:
            best = (score, rings, sectors)
    return best[1], best[2]


def tube(sectors: int, rings: int, width: float = 0.4, depth: float = 0.12, height: float = 0.5,
         top: float = 0.0) -> Mesh:
    """Two-panel garment: front and back panels sewn along both sides.

    The cross-section is an ellipse of ``width`` by ``depth``; ring 0 is the
    top hem at height ``top``, the garment hangs down to ``top - height``.
    Triangulated with alternating diagonals.
    """
    theta = 2 * np.pi * np.arange(sectors) / sectors
    z = top - np.linspace(0.0, height, rings)
    Z, T = np.meshgrid(z, theta, indexing="ij")
    nodes = np.column_stack([
        (0.5 * width * np.cos(T)).ravel(),
        (0.5 * depth * np.sin(T)).ravel(),
        Z.ravel(),
    ])
    elements = []
    for r in range(rings - 1):
        for s in range(sectors):
            a, b = r * sectors + s, r * sectors + (s + 1) % sectors
            c, d = b + sectors, a + sectors
            # rings run downwards, so (a, d, c, b) keeps the normal outward
            if (r + s) % 2:
                elements += [(a, d, c), (a, c, b)]
            else:
                elements += [(a, d, b), (d, c, b)]
    return build_mesh(nodes, elements)


def with_noise(mesh: Mesh, sigma: float, seed: int = 0, axes=(2,)) -> Mesh:
    """Copy of ``mesh`` with seeded Gaussian noise on the given coordinate axes."""
    rng = np.random.default_rng(seed)
    nodes = mesh.nodes.copy()
    for ax in axes:
        nodes[:, ax] += rng.normal(0.0, sigma, len(nodes))
    return build_mesh(nodes, mesh.elements, corners=mesh.corner_nodes)


def with_ripple(mesh: Mesh, amplitude: float, seed: int = 0, modes: int = 12,
                inner: float = 0.09, outer: float = 0.15) -> Mesh:
    """Copy of an xy annulus with a smooth random out-of-plane ripple.

    The ripple is ``amplitude * ramp(r) * sum_k a_k cos(k theta + psi_k)`` for
    ``k = 1..modes`` with seeded ``a_k``, ``psi_k`` and ``ramp`` rising from 0
    at ``inner`` to 1 at ``outer``. Being a continuous field, it perturbs
    every resolution of the same ring the same way, unlike per-node noise.
    """
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0, modes) / np.sqrt(modes)
    psi = rng.uniform(0.0, 2 * np.pi, modes)
    P = mesh.nodes
    r = np.linalg.norm(P[:, :2], axis=1)
    theta = np.arctan2(P[:, 1], P[:, 0])
    ramp = np.clip((r - inner) / (outer - inner), 0.0, 1.0) ** 2
    k = np.arange(1, modes + 1)
    nodes = P.copy()
    nodes[:, 2] += amplitude * ramp * (np.cos(np.outer(theta, k) + psi) @ a)
    return build_mesh(nodes, mesh.elements, corners=mesh.corner_nodes)


def nearest_node(mesh: Mesh, point) -> int:
    d = np.linalg.norm(mesh.rest_positions - np.asarray(point, dtype=float), axis=1)
    return int(np.argmin(d))


GENERATORS = {
    "grid": grid,
    "triangles": jittered_triangles,
    "annulus": annulus,
    "annulus_nodes": annulus_for_nodes,
    "annulus_triangles": annulus_triangles,
    "tube": tube,
}


def generate(spec: dict) -> Mesh:
    """Build a mesh from ``{"kind": name, **kwargs}``.

    Optional extras: ``noise``/``noise_seed`` (Gaussian z noise) and
    ``ripple`` (keyword arguments of :func:`with_ripple`).
    """
    spec = dict(spec)
    kind = spec.pop("kind")
    noise = spec.pop("noise", 0.0)
    noise_seed = spec.pop("noise_seed", spec.get("seed", 0))
    ripple = spec.pop("ripple", None)
    if kind not in GENERATORS:
        raise ValueError(f"unknown mesh generator {kind!r}")
    for key in ("origin", "center"):
        if key in spec:
            spec[key] = tuple(spec[key])
    mesh = GENERATORS[kind](**spec)
    if noise:
        mesh = with_noise(mesh, float(noise), int(noise_seed))
    if ripple:
        mesh = with_ripple(mesh, **ripple)
    return mesh
