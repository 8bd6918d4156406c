"""Static implicit obstacles ``H(p) >= 0`` evaluated per node.

``H`` is a signed distance in meters, so contact tolerances are lengths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("direction must be non-zero")
    return v / norm


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def evaluate(self, X):
        d = np.asarray(X, dtype=float) - np.asarray(self.center, dtype=float)
        r = np.linalg.norm(d, axis=1)
        safe = np.where(r > 0, r, 1.0)
        grad = d / safe[:, None]
        grad[r == 0] = (0.0, 0.0, 1.0)
        return r - self.radius, grad

    def to_dict(self):
        return {"type": "sphere", "center": list(map(float, self.center)), "radius": float(self.radius)}


@dataclass(frozen=True)
class HalfSpace:
    point: tuple
    normal: tuple = (0.0, 0.0, 1.0)

    def evaluate(self, X):
        n = _unit(self.normal)
        X = np.asarray(X, dtype=float)
        H = (X - np.asarray(self.point, dtype=float)) @ n
        return H, np.broadcast_to(n, X.shape).copy()

    def to_dict(self):
        return {"type": "plane", "point": list(map(float, self.point)), "normal": list(map(float, self.normal))}


@dataclass(frozen=True)
class Cylinder:
    """Infinite solid cylinder around an axis line."""

    point: tuple
    axis: tuple
    radius: float

    def evaluate(self, X):
        a = _unit(self.axis)
        d = np.asarray(X, dtype=float) - np.asarray(self.point, dtype=float)
        radial = d - np.outer(d @ a, a)
        r = np.linalg.norm(radial, axis=1)
        safe = np.where(r > 0, r, 1.0)
        grad = radial / safe[:, None]
        return r - self.radius, grad

    def to_dict(self):
        return {
            "type": "cylinder",
            "point": list(map(float, self.point)),
            "axis": list(map(float, self.axis)),
            "radius": float(self.radius),
        }


_FIELDS = {
    "sphere": (Sphere, ("center", "radius"), {}),
    "plane": (HalfSpace, ("point",), {"normal": (0.0, 0.0, 1.0)}),
    "cylinder": (Cylinder, ("point", "axis", "radius"), {}),
}


def obstacle_from_dict(spec: dict):
    spec = dict(spec)
    kind = spec.pop("type", None)
    if kind not in _FIELDS:
        raise ValueError(f"unknown obstacle type {kind!r}")
    cls, required, optional = _FIELDS[kind]
    missing = [k for k in required if k not in spec]
    extra = set(spec) - set(required) - set(optional)
    if missing or extra:
        raise ValueError(f"{kind} obstacle: missing {missing}, unknown {sorted(extra)}")
    args = [spec.get(k, optional.get(k)) for k in required + tuple(optional)]
    args = [float(a) if np.isscalar(a) else tuple(map(float, a)) for a in args]
    return cls(*args)
