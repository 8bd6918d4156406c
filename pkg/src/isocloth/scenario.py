"""Scenario files: mesh source, parameters, handle motions, obstacles and
integrator settings in one YAML document.

Unknown keys are rejected everywhere so that typos fail loudly instead of
silently falling back to defaults.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import dynamics
from .dynamics import PhysParams
from .generators import generate, nearest_node, with_noise
from .mesh import Mesh, build_mesh, load_mesh
from .obstacles import obstacle_from_dict


class ScenarioError(ValueError):
    pass


SECTIONS = {
    "name": None,
    "seed": None,
    "mesh": {"path", "generator", "corners", "noise"},
    "params": {"rho", "delta", "kappa", "alpha", "beta"},
    "handles": None,
    "obstacles": None,
    "integrator": {"dt", "duration", "tol", "max_iter", "substeps", "max_refine", "regularization", "polish"},
    "outputs": {"stride", "reports", "prefix"},
}

DEFAULTS = {
    "name": "run",
    "seed": 0,
    "params": {"rho": 1.0, "delta": 1.0, "kappa": 0.0, "alpha": 0.0, "beta": 0.0},
    "handles": [],
    "obstacles": [],
    "integrator": {
        "dt": dynamics.DEFAULT_DT,
        "duration": 1.0,
        "tol": dynamics.DEFAULT_TOL,
        "max_iter": dynamics.DEFAULT_MAX_ITER,
        "substeps": 1,
        "max_refine": dynamics.DEFAULT_MAX_REFINE,
        "regularization": dynamics.REGULARIZATION,
        "polish": dynamics.POLISH,
    },
    "outputs": {"stride": 1, "reports": True, "prefix": None},
}

_SELECTORS = ("node", "nodes", "nearest", "within")
_MOTIONS = {
    "fixed": set(),
    "oscillation": {"amplitude", "frequency", "center", "axis", "start", "stop"},
    "scripted": {"times", "positions"},
}


def _check_keys(where: str, mapping, allowed) -> None:
    if not isinstance(mapping, dict):
        raise ScenarioError(f"{where}: expected a mapping, got {type(mapping).__name__}")
    extra = set(mapping) - set(allowed)
    if extra:
        raise ScenarioError(f"{where}: unknown keys {sorted(extra)}")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


# ---------------------------------------------------------------------------
# Handle motions
# ---------------------------------------------------------------------------


class Fixed:
    def __init__(self, rest):
        self.rest = np.asarray(rest, dtype=float)

    def __call__(self, t):
        return self.rest


class Oscillation:
    """``x(t) = A cos(2 pi f (t - start)) + c`` along one axis, other coordinates
    held at rest. Outside ``[start, stop]`` the position is frozen.

    ``c`` defaults to ``rest - A`` so the motion starts where the node rests.
    """

    def __init__(self, rest, amplitude, frequency, center=None, axis=0, start=0.0, stop=None):
        self.rest = np.asarray(rest, dtype=float)
        self.A = float(amplitude)
        self.f = float(frequency)
        self.axis = int(axis)
        self.c = self.rest[self.axis] - self.A if center is None else float(center)
        self.start = float(start)
        self.stop = None if stop is None else float(stop)

    def __call__(self, t):
        s = min(max(t, self.start), self.stop if self.stop is not None else np.inf)
        p = self.rest.copy()
        p[self.axis] = self.A * np.cos(2 * np.pi * self.f * (s - self.start)) + self.c
        return p


class Scripted:
    """Piecewise-linear samples, clamped at both ends."""

    def __init__(self, times, positions):
        self.times = np.asarray(times, dtype=float)
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        if len(self.times) != len(self.positions) or len(self.times) == 0:
            raise ScenarioError("scripted motion needs matching non-empty times and positions")
        if np.any(np.diff(self.times) <= 0):
            raise ScenarioError("scripted times must increase")

    def __call__(self, t):
        return np.array([np.interp(t, self.times, self.positions[:, c]) for c in range(3)])


_AXES = {"x": 0, "y": 1, "z": 2}


def _motion(spec, rest):
    spec = dict(spec or {"type": "fixed"})
    kind = spec.pop("type", "fixed")
    if kind not in _MOTIONS:
        raise ScenarioError(f"unknown handle motion {kind!r}")
    _check_keys(f"{kind} motion", spec, _MOTIONS[kind])
    if kind == "fixed":
        return Fixed(rest)
    if kind == "scripted":
        return Scripted(spec["times"], spec["positions"])
    for key in ("amplitude", "frequency"):
        if key not in spec:
            raise ScenarioError(f"oscillation motion needs {key!r}")
    axis = spec.pop("axis", "x")
    return Oscillation(rest, axis=_AXES.get(axis, axis), **spec)


def _select(spec, mesh: Mesh) -> list:
    present = [k for k in _SELECTORS if k in spec]
    if len(present) != 1:
        raise ScenarioError(f"handle needs exactly one of {_SELECTORS}, got {present}")
    key = present[0]
    if key == "node":
        nodes = [spec["node"]]
    elif key == "nodes":
        nodes = list(spec["nodes"])
    elif key == "nearest":
        nodes = [nearest_node(mesh, spec["nearest"])]
    else:
        w = spec["within"]
        _check_keys("within", w, {"center", "radius", "axes"})
        axes = list(w.get("axes", [0, 1, 2]))
        d = mesh.rest_positions[:, axes] - np.asarray(w["center"], dtype=float)[axes]
        nodes = np.flatnonzero(np.linalg.norm(d, axis=1) <= float(w["radius"])).tolist()
        if not nodes:
            raise ScenarioError("'within' selector matched no nodes")
    nodes = [int(k) for k in nodes]
    bad = [k for k in nodes if not 0 <= k < mesh.n]
    if bad:
        raise ScenarioError(f"handle node indices out of range: {bad}")
    return nodes


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    mesh: Mesh
    params: PhysParams
    dt: float = dynamics.DEFAULT_DT
    duration: float = 1.0
    tol: float = dynamics.DEFAULT_TOL
    max_iter: int = dynamics.DEFAULT_MAX_ITER
    substeps: int = 1
    max_refine: int = dynamics.DEFAULT_MAX_REFINE
    regularization: float = dynamics.REGULARIZATION
    polish: int = dynamics.POLISH
    stride: int = 1
    obstacles: tuple = ()
    handles: list = field(default_factory=list)  # [(node, motion)]
    initial: np.ndarray | None = None
    name: str = "run"
    resolved: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise ScenarioError(f"dt must be positive, got {self.dt}")
        if not self.duration >= 0:
            raise ScenarioError(f"duration must be non-negative, got {self.duration}")
        if self.substeps < 1 or self.stride < 1 or self.max_iter < 0:
            raise ScenarioError("substeps and stride must be >= 1, max_iter >= 0")
        if not self.regularization >= 0 or self.polish < 0:
            raise ScenarioError("regularization and polish must be >= 0")
        seen = set()
        for node, _ in self.handles:
            if not 0 <= node < self.mesh.n:
                raise ScenarioError(f"handle node {node} out of range")
            if node in seen:
                raise ScenarioError(f"node {node} is handled twice")
            seen.add(node)

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    def handle_nodes(self) -> np.ndarray:
        return np.array([k for k, _ in self.handles], dtype=np.int64)

    def handle_targets(self, t: float) -> np.ndarray:
        if not self.handles:
            return np.zeros((0, 3))
        return np.array([motion(t) for _, motion in self.handles], dtype=float)

    def initial_positions(self) -> np.ndarray:
        return self.mesh.rest_positions.copy() if self.initial is None else self.initial

    def with_params(self, **changes) -> "Scenario":
        params = PhysParams(**{**self.params.__dict__, **changes})
        out = copy.copy(self)
        out.params = params
        out.resolved = _merge(self.resolved, {"params": {k: float(v) for k, v in changes.items()}})
        return out


def _load_mesh_section(spec: dict, base: Path, seed: int) -> Mesh:
    _check_keys("mesh", spec, SECTIONS["mesh"])
    if ("path" in spec) == ("generator" in spec):
        raise ScenarioError("mesh needs exactly one of 'path' or 'generator'")
    corners = spec.get("corners")
    if "path" in spec:
        path = Path(spec["path"])
        if not path.is_absolute():
            path = base / path
        mesh = load_mesh(path, corners=corners)
    else:
        try:
            mesh = generate(spec["generator"])
        except (TypeError, KeyError) as exc:
            raise ScenarioError(f"mesh generator: {exc}") from exc
        if corners is not None:
            mesh = build_mesh(mesh.nodes, mesh.elements, corners=corners)
    noise = spec.get("noise")
    if noise:
        _check_keys("mesh.noise", noise, {"sigma", "seed", "axes"})
        mesh = with_noise(mesh, float(noise["sigma"]), int(noise.get("seed", seed)),
                          tuple(noise.get("axes", (2,))))
    return mesh


def from_dict(doc: dict, base=".") -> Scenario:
    """Build a scenario from a parsed document; relative paths resolve against ``base``."""
    if doc is None:
        doc = {}
    _check_keys("scenario", doc, SECTIONS)
    for sec in ("params", "integrator", "outputs"):
        if sec in doc:
            _check_keys(sec, doc[sec], SECTIONS[sec])
    if "mesh" not in doc:
        raise ScenarioError("scenario has no mesh section")
    resolved = _merge(DEFAULTS, doc)
    seed = int(resolved["seed"])
    mesh = _load_mesh_section(resolved["mesh"], Path(base), seed)

    try:
        params = PhysParams(**{k: float(v) for k, v in resolved["params"].items()})
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc

    handles = []
    for i, h in enumerate(resolved["handles"] or []):
        _check_keys(f"handles[{i}]", h, set(_SELECTORS) | {"motion"})
        for node in _select(h, mesh):
            handles.append((node, _motion(h.get("motion"), mesh.rest_positions[node])))

    try:
        obstacles = tuple(obstacle_from_dict(o) for o in resolved["obstacles"] or [])
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc

    integ, outs = resolved["integrator"], resolved["outputs"]
    return Scenario(
        mesh=mesh,
        params=params,
        dt=float(integ["dt"]),
        duration=float(integ["duration"]),
        tol=float(integ["tol"]),
        max_iter=int(integ["max_iter"]),
        substeps=int(integ["substeps"]),
        max_refine=int(integ["max_refine"]),
        regularization=float(integ["regularization"]),
        polish=int(integ["polish"]),
        stride=int(outs["stride"]),
        obstacles=obstacles,
        handles=handles,
        name=str(resolved["name"]),
        resolved=resolved,
    )


def parse_override(text: str):
    """``"params.delta=0.37"`` -> ``(["params", "delta"], 0.37)``; values are YAML scalars."""
    if "=" not in text:
        raise ScenarioError(f"override {text!r} is not key=value")
    key, value = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ScenarioError(f"override {text!r} has an empty key")
    return path, yaml.safe_load(value)


def apply_overrides(doc: dict, overrides) -> dict:
    doc = copy.deepcopy(doc or {})
    for text in overrides or ():
        path, value = parse_override(text)
        node = doc
        for p in path[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ScenarioError(f"override {text!r} descends into a non-mapping")
        node[path[-1]] = value
    return doc


def load_scenario(path, overrides=()) -> Scenario:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return from_dict(apply_overrides(doc, overrides), base=path.parent)


def dump_resolved(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.resolved, sort_keys=True)
