"""Plain-text trajectories and JSON sidecars.

Trajectory files start with ``#`` comment lines (free-form metadata), then a
header line ``n <nodes> dt <seconds>``, then one line per frame:
``t x1 y1 z1 ... xn yn zn``. Floats are written with ``repr`` so a
write/read round trip is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dynamics import Trajectory
from .mesh import stack, unstack


class TrajectoryFormatError(ValueError):
    pass


def _fmt(x) -> str:
    return repr(float(x))


def write_trajectory(path, traj: Trajectory, comments=()) -> None:
    n = traj.n
    lines = [f"# {c}" for c in comments]
    lines.append(f"n {n} dt {_fmt(traj.dt)}")
    for t, phi in zip(traj.times, traj.frames):
        X = unstack(phi)
        lines.append(" ".join([_fmt(t)] + [_fmt(v) for v in X.ravel()]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path) -> Trajectory:
    """Inverse of :func:`write_trajectory`; comments land in ``header['comments']``."""
    comments, header, times, frames = [], None, [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                comments.append(line[1:].strip())
                continue
            parts = line.split()
            if header is None:
                if len(parts) != 4 or parts[0] != "n" or parts[2] != "dt":
                    raise TrajectoryFormatError(f"{path}:{lineno}: expected 'n <nodes> dt <seconds>'")
                try:
                    header = (int(parts[1]), float(parts[3]))
                except ValueError as exc:
                    raise TrajectoryFormatError(f"{path}:{lineno}: {exc}") from exc
                continue
            n = header[0]
            if len(parts) != 1 + 3 * n:
                raise TrajectoryFormatError(
                    f"{path}:{lineno}: expected {1 + 3 * n} values, got {len(parts)}"
                )
            try:
                vals = np.array([float(p) for p in parts])
            except ValueError as exc:
                raise TrajectoryFormatError(f"{path}:{lineno}: {exc}") from exc
            times.append(vals[0])
            frames.append(stack(vals[1:].reshape(n, 3)))
    if header is None:
        raise TrajectoryFormatError(f"{path}: missing 'n ... dt ...' header")
    n, dt = header
    frames = np.array(frames).reshape(-1, 3 * n)
    return Trajectory(dt, np.array(times), frames, [], {"n": n, "dt": dt, "comments": comments})


def write_reports(path, traj: Trajectory, extra=None) -> None:
    doc = {
        "dt": traj.dt,
        "steps": len(traj.reports),
        "flagged_steps": traj.flagged_steps,
        "max_residual": max((r.residual for r in traj.reports), default=0.0),
        "reports": [r.to_dict() for r in traj.reports],
    }
    if extra:
        doc.update(extra)
    write_json(path, doc)


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_table(path, columns: dict) -> None:
    """Column-ordered plain-text table with a ``#`` header naming the columns."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    lines = ["# " + " ".join(names)]
    lines += [" ".join(_fmt(v) for v in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n")
