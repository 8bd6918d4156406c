"""Benchmark scenarios: locking, Cusick drape, garment shaking, contact drops
and the hanging A3 sheet used for calibration and resolution checks.

Each ``*_doc`` function returns a plain scenario document (the same shape a
YAML scenario file has), so every run can be echoed and replayed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .analysis import DrapeResult, area_metrics, drape_coefficient
from .calibration import CalibrationProblem, FitResult, fit
from .dynamics import Trajectory, simulate
from .generators import nearest_node, tube
from .scenario import Scenario, from_dict

# ---------------------------------------------------------------------------
# Locking test
# ---------------------------------------------------------------------------

LOCKING_MESHES = {
    "tri-484": {"kind": "triangles", "nx": 22, "ny": 22, "seed": 1},
    "tri-961": {"kind": "triangles", "nx": 31, "ny": 31, "seed": 2},
    "quad-529": {"kind": "grid", "nx": 23, "ny": 23},
    "quad-900": {"kind": "grid", "nx": 30, "ny": 30},
}
LOCKING_PARAMS = {"rho": 1.0, "delta": 1.0, "kappa": 0.0, "alpha": 6.0, "beta": 0.0}
FIXED_CORNERS = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
FREE_CORNER = (1.0, 1.0, 0.0)


def locking_doc(mesh: str, seed: int = 0, duration: float = 2.0) -> dict:
    """1 m square, three corners pinned, 3 mm Gaussian z noise."""
    return {
        "name": f"locking-{mesh}",
        "seed": seed,
        "mesh": {"generator": dict(LOCKING_MESHES[mesh]), "noise": {"sigma": 0.003, "seed": seed}},
        "params": dict(LOCKING_PARAMS),
        "handles": [{"nearest": list(c)} for c in FIXED_CORNERS],
        "integrator": {"dt": 0.01, "duration": duration, "substeps": 4},
        "outputs": {"stride": 10},
    }


@dataclass
class LockingResult:
    names: list
    corners: np.ndarray  # final free-corner positions (m)
    drops: np.ndarray  # free-corner z drop (m)
    trajectories: dict = field(default_factory=dict, repr=False)

    @property
    def distances(self) -> np.ndarray:
        d = self.corners[:, None, :] - self.corners[None, :, :]
        return np.linalg.norm(d, axis=2)

    def table(self) -> str:
        """Pairwise distances in cm, one row per mesh."""
        D = 100.0 * self.distances
        head = "mesh " + " ".join(self.names)
        rows = [f"{a} " + " ".join(f"{v:.2f}" for v in row) for a, row in zip(self.names, D)]
        return "\n".join([head] + rows) + "\n"


def run_locking(meshes=None, seed: int = 0, duration: float = 2.0, overrides=None) -> LockingResult:
    names = list(meshes or LOCKING_MESHES)
    corners, drops, trajs = [], [], {}
    for name in names:
        doc = locking_doc(name, seed, duration)
        if overrides:
            doc = overrides(doc)
        sc = from_dict(doc)
        free = nearest_node(sc.mesh, FREE_CORNER)
        traj = simulate(sc)
        first, last = traj.positions(0)[free], traj.positions(-1)[free]
        corners.append(last)
        drops.append(first[2] - last[2])
        trajs[name] = (sc, traj)
    return LockingResult(names, np.array(corners), np.array(drops), trajs)


# ---------------------------------------------------------------------------
# Cusick drape
# ---------------------------------------------------------------------------

TABLE_RADIUS = 0.09
CLOTH_RADIUS = 0.15
CUSICK_PRESETS = {"low": 2.0e-5, "medium": 6.0e-5, "high": 1.35e-4}
CUSICK_SWEEP = (250, 400, 550, 700, 768, 850, 1000, 1150, 1300)


def cusick_doc(kappa: float, nodes: int = 768, seed: int = 0, duration: float = 0.75) -> dict:
    """Annulus pinned along its inner rim, draping under gravity."""
    return {
        "name": f"cusick-{nodes}-{kappa:g}",
        "seed": seed,
        "mesh": {
            "generator": {
                "kind": "annulus_nodes",
                "target": nodes,
                "inner": TABLE_RADIUS,
                "outer": CLOTH_RADIUS,
                "ripple": {"amplitude": 5e-4, "seed": seed},
            }
        },
        "params": {"rho": 1.0, "delta": 1.0, "kappa": float(kappa), "alpha": 20.0, "beta": 0.0},
        "handles": [{"within": {"center": [0.0, 0.0, 0.0], "radius": TABLE_RADIUS + 1e-6, "axes": [0, 1]}}],
        "integrator": {"dt": 0.01, "duration": duration, "substeps": 4},
        "outputs": {"stride": 25},
    }


@dataclass
class CusickRun:
    kappa: float
    nodes: int
    drape: DrapeResult
    scenario: Scenario = field(repr=False)
    trajectory: Trajectory = field(repr=False)


def run_cusick(kappa: float, nodes: int = 768, seed: int = 0, duration: float = 0.75,
               grid: float = 1e-3) -> CusickRun:
    sc = from_dict(cusick_doc(kappa, nodes, seed, duration))
    traj = simulate(sc)
    dc = drape_coefficient(sc.mesh, traj.frames[-1], TABLE_RADIUS, CLOTH_RADIUS, grid)
    return CusickRun(float(kappa), sc.mesh.n, dc, sc, traj)


def resolve_kappa(value) -> float:
    """Preset name or a number."""
    if isinstance(value, str) and value in CUSICK_PRESETS:
        return CUSICK_PRESETS[value]
    return float(value)


# ---------------------------------------------------------------------------
# Garment shaking (area conservation)
# ---------------------------------------------------------------------------


def garment_doc(sectors: int = 40, rings: int = 20, duration: float = 4.5) -> dict:
    """Two-panel tube held at both shoulders and shaken sideways."""
    mesh = tube(sectors, rings)
    P = mesh.rest_positions
    top = np.flatnonzero(np.isclose(P[:, 2], 0.0))
    shoulders = top[np.abs(P[top, 0]) > 0.12].tolist()
    return {
        "name": "garment",
        "mesh": {"generator": {"kind": "tube", "sectors": sectors, "rings": rings}},
        "params": {"rho": 1.0, "delta": 1.0, "kappa": 1e-4, "alpha": 1.0, "beta": 0.0},
        "handles": [{
            "nodes": shoulders,
            "motion": {"type": "oscillation", "amplitude": 0.1, "frequency": 1.0, "axis": "x",
                       "start": 0.5, "stop": 4.0},
        }],
        "integrator": {"dt": 0.01, "duration": duration, "substeps": 2},
        "outputs": {"stride": 5},
    }


def run_garment(**kwargs):
    sc = from_dict(garment_doc(**kwargs))
    traj = simulate(sc)
    return sc, traj, area_metrics(sc.mesh, traj.frames, traj.times)


# ---------------------------------------------------------------------------
# Contact drops
# ---------------------------------------------------------------------------


def drop_doc(obstacle: str = "sphere", duration: float = 1.0) -> dict:
    if obstacle == "sphere":
        obs = {"type": "sphere", "center": [0.0, 0.0, 0.0], "radius": 0.15}
        origin = [-0.25, -0.25, 0.2]
    elif obstacle == "plane":
        obs = {"type": "plane", "point": [0.0, 0.0, 0.0], "normal": [0.0, 0.0, 1.0]}
        origin = [-0.25, -0.25, 0.05]
    else:
        raise ValueError(f"unknown drop obstacle {obstacle!r}")
    return {
        "name": f"drop-{obstacle}",
        "mesh": {"generator": {"kind": "grid", "nx": 11, "ny": 11, "width": 0.5, "height": 0.5,
                               "origin": origin},
                 "noise": {"sigma": 0.002, "seed": 0}},
        "params": {"rho": 1.0, "delta": 1.0, "kappa": 1e-4, "alpha": 2.0, "beta": 0.0},
        "obstacles": [obs],
        "integrator": {"dt": 0.01, "duration": duration, "substeps": 2},
    }


def run_drop(obstacle: str = "sphere", duration: float = 1.0):
    sc = from_dict(drop_doc(obstacle, duration))
    return sc, simulate(sc)


# ---------------------------------------------------------------------------
# Hanging A3 sheet: calibration and resolution
# ---------------------------------------------------------------------------

A3 = (0.297, 0.42)
MOTIONS = {"slow": (0.15, 0.3), "fast": (0.075, 0.6)}


def shaking_doc(n: int = 9, motion: str = "fast", delta: float = 0.52, alpha: float = 2.69,
                duration: float = 14.0, m: int | None = None) -> dict:
    """A3 sheet hanging in the yz plane from its top corners, which oscillate
    along x for 10 s starting at t = 1 s."""
    A, f = MOTIONS[motion]
    w, h = A3
    osc = {"type": "oscillation", "amplitude": A, "frequency": f, "axis": "x", "start": 1.0, "stop": 11.0}
    return {
        "name": f"shaking-{motion}-{n}x{m or n}",
        "mesh": {"generator": {"kind": "grid", "nx": n, "ny": m or n, "width": w, "height": h,
                               "plane": "yz", "origin": [0.0, 0.0, -h]}},
        "params": {"rho": 1.0, "delta": float(delta), "kappa": 0.0, "alpha": float(alpha), "beta": 0.0},
        "handles": [
            {"nearest": [0.0, 0.0, 0.0], "motion": dict(osc)},
            {"nearest": [0.0, w, 0.0], "motion": dict(osc)},
        ],
        # coarse quad grid: damp hourglass modes so the fit loss is smooth in (delta, alpha)
        "integrator": {"dt": 0.01, "duration": duration, "regularization": 1e-5, "polish": 1},
    }


def bottom_corners(mesh) -> list:
    w, h = A3
    return [nearest_node(mesh, (0.0, 0.0, -h)), nearest_node(mesh, (0.0, w, -h))]


def corner_discrepancy(a: tuple, b: tuple, until: float = 10.0) -> float:
    """Mean distance between matching bottom corners of two runs up to ``until``."""
    (sa, ta), (sb, tb) = a, b
    keep = ta.times <= until + 1e-9
    d = [
        np.linalg.norm(ta.frames[keep].reshape(-1, 3, sa.mesh.n)[:, :, i]
                       - tb.frames[keep].reshape(-1, 3, sb.mesh.n)[:, :, j], axis=1)
        for i, j in zip(bottom_corners(sa.mesh), bottom_corners(sb.mesh))
    ]
    return float(np.mean(d))


def calibration_roundtrip(truth=(0.52, 2.69), start=(0.4, 1.5), motion: str = "fast",
                          duration: float = 14.0) -> tuple:
    """Simulate a reference at ``truth`` and fit it back from ``start``."""
    ref_sc = from_dict(shaking_doc(9, motion, *truth, duration=duration))
    reference = simulate(ref_sc).frames
    template = from_dict(shaking_doc(9, motion, *start, duration=duration))
    problem = CalibrationProblem(template, reference)
    result: FitResult = fit(problem, start)
    return problem, result


def pairwise_max(values) -> float:
    return max((abs(a - b) for a, b in combinations(values, 2)), default=0.0)
