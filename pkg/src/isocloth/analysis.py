"""Evaluation of simulated trajectories: element areas, area errors, drape
coefficient and distance to a reference recording."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage.draw import polygon as raster_polygon

from .assembly import LumpedMass
from .mesh import Mesh, tabulate, unstack


def _as_positions(phi, n=None) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    X = phi if phi.ndim == 2 else unstack(phi)
    if n is not None and len(X) != n:
        raise ValueError(f"expected {n} nodes, got {len(X)}")
    return X


def element_areas(mesh: Mesh, phi) -> np.ndarray:
    """Area of every element at positions ``phi``, in file order."""
    X = _as_positions(phi, mesh.n)
    out = np.zeros(len(mesh.elements))
    for kind, ids, conn in mesh.groups():
        tab = tabulate(kind)
        t = np.einsum("qma,emc->eqac", tab.dN, X[conn])
        E = np.einsum("eqc,eqc->eq", t[:, :, 0], t[:, :, 0])
        F = np.einsum("eqc,eqc->eq", t[:, :, 0], t[:, :, 1])
        G = np.einsum("eqc,eqc->eq", t[:, :, 1], t[:, :, 1])
        out[ids] = np.sqrt(np.abs(E * G - F**2)) @ tab.rule.weights
    return out


def element_area(mesh: Mesh, phi, element: int) -> float:
    return float(element_areas(mesh, phi)[element])


@dataclass
class AreaMetrics:
    times: np.ndarray
    e_t: np.ndarray
    e_m: np.ndarray
    d_a: np.ndarray
    signed: np.ndarray  # (frames, elements)

    def summary(self) -> dict:
        return {
            "e_t_max": float(self.e_t.max()),
            "e_m_max": float(self.e_m.max()),
            "e_m_mean": float(self.e_m.mean()),
            "d_a_max": float(self.d_a.max()),
        }


def area_metrics(mesh: Mesh, frames, times=None) -> AreaMetrics:
    """Total, mean-element and dispersion area errors against frame 0."""
    frames = np.asarray(frames, dtype=float)
    a = np.array([element_areas(mesh, f) for f in frames])
    a0 = a[0]
    if np.any(a0 <= 0):
        raise ValueError("zero rest element area")
    signed = (a - a0) / a0
    rel = np.abs(signed)
    A = a.sum(axis=1)
    e_t = np.abs(A - A[0]) / A[0]
    e_m = rel.mean(axis=1)
    d_a = e_m + 2.0 * np.sqrt(rel.var(axis=1))  # population variance
    if times is None:
        times = np.arange(len(frames), dtype=float)
    return AreaMetrics(np.asarray(times, dtype=float), e_t, e_m, d_a, signed)


@dataclass
class DrapeResult:
    DC: float  # percent
    projected_area: float
    ring_area: float
    grid: float


def drape_coefficient(mesh: Mesh, phi, table_radius: float = 0.09, outer_radius: float = 0.15,
                      grid: float = 1e-3, center=(0.0, 0.0)) -> DrapeResult:
    """Drape coefficient from a raster of the xy silhouette.

    Overlapping folds are counted once since cells are marked, not summed.
    """
    if grid <= 0:
        raise ValueError("grid must be positive")
    X = _as_positions(phi, mesh.n)
    ring = np.pi * (outer_radius**2 - table_radius**2)
    tris = mesh.triangles()
    if len(tris) == 0:
        return DrapeResult(0.0, 0.0, ring, grid)
    xy = X[:, :2] - np.asarray(center, dtype=float)
    lo = xy.min(axis=0) - 2 * grid
    shape = tuple(np.ceil((xy.max(axis=0) + 2 * grid - lo) / grid).astype(int) + 1)
    # cell (i, j) has its center at lo + (i + 1/2, j + 1/2) * grid
    cells = (xy - lo) / grid - 0.5
    mask = np.zeros(shape, dtype=bool)
    for tri in tris:
        rr, cc = raster_polygon(cells[tri, 0], cells[tri, 1], shape)
        mask[rr, cc] = True
    area = float(mask.sum()) * grid * grid
    return DrapeResult(100.0 * area / ring, area, ring, grid)


@dataclass
class TrajectoryError:
    e: np.ndarray  # per-frame M-weighted error (m)
    d: np.ndarray  # e + 2 std of the per-node error (m)
    window: tuple
    node_mean: np.ndarray = None  # plain mean of per-node distances (m)

    @property
    def mean(self) -> float:
        lo, hi = self.window
        return float(self.e[lo:hi].mean()) if hi > lo else 0.0

    @property
    def mean_dispersion(self) -> float:
        lo, hi = self.window
        return float(self.d[lo:hi].mean()) if hi > lo else 0.0

    @property
    def mean_node(self) -> float:
        lo, hi = self.window
        return float(self.node_mean[lo:hi].mean()) if hi > lo else 0.0


def holdout_window(frames: int) -> tuple:
    """Frames after the fitting half, ``[m/2] + 1 .. m`` for frames ``0 .. m``."""
    m = frames - 1
    return (m // 2 + 1, frames)


def trajectory_error(simulated, reference, mass: LumpedMass, window=None) -> TrajectoryError:
    sim = np.asarray(simulated, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if sim.shape != ref.shape:
        raise ValueError(f"trajectory shapes differ: {sim.shape} vs {ref.shape}")
    if sim.shape[1] != 3 * mass.n:
        raise ValueError("trajectory node count does not match the mass")
    diff = (sim - ref).reshape(len(sim), 3, -1)  # (frames, xyz, n)
    node = np.sqrt(np.sum(diff**2, axis=1))  # per-node euclidean error
    e = np.sqrt(node**2 @ mass.m)
    d = e + 2.0 * node.std(axis=1)
    if window is None:
        window = holdout_window(len(sim))
    return TrajectoryError(e, d, tuple(window), node.mean(axis=1))
