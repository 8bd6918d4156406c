"""Fit the virtual gravitational mass ``delta`` and damping ``alpha`` to a
reference trajectory with Nelder-Mead.

The loss sums the M-weighted squared distance over the first half of the
frames; the second half is held out and reported as the test error.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .analysis import holdout_window, trajectory_error
from .assembly import assemble_lumped_mass
from .dynamics import SimulationError, StepError, simulate
from .scenario import Scenario

logger = logging.getLogger(__name__)

BOUNDS = ((0.0, 2.0), (0.0, 10.0))
STEPS = (0.1, 0.5)  # initial simplex offsets in (delta, alpha)
XATOL = 1e-3  # simplex diameter in scaled coordinates
MAX_ITER = 200


class FitError(RuntimeError):
    pass


def resample_recording(times, points, dt: float, duration: float | None = None) -> np.ndarray:
    """Turn tracked node positions into reference frames on the simulator clock.

    ``points`` has shape ``(samples, n, 3)`` at increasing ``times``; output is
    ``(m + 1, 3n)`` stacked frames at ``0, dt, ..., m dt`` by linear
    interpolation. Camera tracking itself is out of scope.
    """
    times = np.asarray(times, dtype=float)
    points = np.asarray(points, dtype=float)
    if points.ndim != 3 or points.shape[2] != 3 or len(points) != len(times):
        raise ValueError("points must be (samples, n, 3) matching times")
    if len(times) < 2 or np.any(np.diff(times) <= 0):
        raise ValueError("need at least two increasing sample times")
    span = times[-1] - times[0] if duration is None else float(duration)
    grid = times[0] + dt * np.arange(int(np.floor(span / dt + 1e-9)) + 1)
    flat = points.transpose(0, 2, 1).reshape(len(times), -1)  # node-major per coordinate
    return np.column_stack([np.interp(grid, times, col) for col in flat.T])


def _scale():
    return np.array([hi for _, hi in BOUNDS], dtype=float)


@dataclass
class CalibrationProblem:
    """``scenario`` supplies everything but ``(delta, alpha)``; ``reference``
    holds stacked frames ``(m + 1, 3n)`` sampled like the scenario's output."""

    scenario: Scenario
    reference: np.ndarray
    bounds: tuple = BOUNDS
    steps: tuple = STEPS
    _cache: dict = field(default_factory=dict, repr=False)
    health: dict = field(default_factory=dict, repr=False)  # (delta, alpha) -> (max residual, flagged steps)

    def __post_init__(self):
        self.reference = np.asarray(self.reference, dtype=float)
        if self.reference.ndim != 2 or len(self.reference) < 2:
            raise ValueError("reference needs at least 2 frames")
        if self.reference.shape[1] != 3 * self.scenario.mesh.n:
            raise ValueError("reference node count does not match the scenario mesh")
        self.mass = assemble_lumped_mass(self.scenario.mesh)

    @property
    def frames(self) -> int:
        return len(self.reference)

    @property
    def fit_window(self) -> tuple:
        """Frames ``1 .. [m/2]``."""
        return (1, (self.frames - 1) // 2 + 1)

    def simulate(self, delta: float, alpha: float) -> np.ndarray | None:
        key = (float(delta), float(alpha))
        if key not in self._cache:
            try:
                traj = simulate(self.scenario.with_params(delta=delta, alpha=alpha))
                frames = traj.frames
                self.health[key] = (max((r.residual for r in traj.reports), default=0.0),
                                    len(traj.flagged_steps))
                if frames.shape != self.reference.shape or not np.all(np.isfinite(frames)):
                    frames = None
            except (SimulationError, StepError, ValueError) as exc:
                logger.info("simulation failed at delta=%g alpha=%g: %s", delta, alpha, exc)
                frames = None
            self._cache[key] = frames
        return self._cache[key]


def loss(problem: CalibrationProblem, delta: float, alpha: float) -> float:
    """Sum of ``||phi_i - ref_i||_M^2`` over the fitting half; ``inf`` on divergence."""
    (dlo, dhi), (alo, ahi) = problem.bounds
    if not (dlo <= delta <= dhi and alo <= alpha <= ahi):
        return float("inf")
    frames = problem.simulate(delta, alpha)
    if frames is None:
        return float("inf")
    lo, hi = problem.fit_window
    diff = (frames[lo:hi] - problem.reference[lo:hi]).reshape(hi - lo, 3, -1)
    return float(np.sum(diff**2 * problem.mass.m))


@dataclass
class FitResult:
    delta: float
    alpha: float
    loss: float
    iterations: int
    evaluations: int
    converged: bool
    train_error: float  # mean e_i over the fitting half (m)
    test_error: float  # mean e_i over the held-out half (m)
    test_dispersion: float
    test_node_error: float  # mean per-node distance over the held-out half (m)
    simplex: np.ndarray

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "alpha": self.alpha,
            "loss": self.loss,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "converged": self.converged,
            "train_error": self.train_error,
            "test_error": self.test_error,
            "test_dispersion": self.test_dispersion,
            "test_node_error": self.test_node_error,
        }


def fit(problem: CalibrationProblem, start=(0.4, 1.5), xatol: float = XATOL,
        max_iter: int = MAX_ITER) -> FitResult:
    """Nelder-Mead in coordinates scaled by the bound widths, axis-aligned start simplex."""
    scale = _scale()
    x0 = np.asarray(start, dtype=float) / scale
    simplex = np.vstack([x0, x0 + [problem.steps[0] / scale[0], 0.0], x0 + [0.0, problem.steps[1] / scale[1]]])

    def objective(u):
        d, a = u * scale
        return loss(problem, d, a)

    if not np.any(np.isfinite([objective(u) for u in simplex])):
        raise FitError("every vertex of the initial simplex diverged")
    res = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        bounds=[(lo / s, hi / s) for (lo, hi), s in zip(problem.bounds, scale)],
        options={"initial_simplex": simplex, "xatol": xatol, "fatol": np.inf, "maxiter": max_iter},
    )
    delta, alpha = (res.x * scale).tolist()
    frames = problem.simulate(delta, alpha)
    if frames is None:
        raise FitError("simulation diverged at the fitted parameters")
    err = trajectory_error(frames, problem.reference, problem.mass, holdout_window(problem.frames))
    lo, hi = problem.fit_window
    return FitResult(
        delta=delta,
        alpha=alpha,
        loss=float(res.fun),
        iterations=int(res.nit),
        evaluations=int(res.nfev),
        converged=bool(res.success),
        train_error=float(err.e[lo:hi].mean()),
        test_error=err.mean,
        test_dispersion=err.mean_dispersion,
        test_node_error=err.mean_node,
        simplex=res.final_simplex[0] * scale,
    )


class ParameterFitter(BaseEstimator):
    """Estimator front end: ``fit(reference)`` learns ``delta_`` and ``alpha_``,
    ``predict()`` replays the scenario with them."""

    def __init__(self, scenario=None, start=(0.4, 1.5), xatol=XATOL, max_iter=MAX_ITER):
        self.scenario = scenario
        self.start = start
        self.xatol = xatol
        self.max_iter = max_iter

    def _problem(self, reference):
        if self.scenario is None:
            raise ValueError("ParameterFitter needs a scenario")
        reference = check_array(reference, ensure_min_samples=2)
        return CalibrationProblem(self.scenario, reference)

    def fit(self, X, y=None):
        problem = self._problem(X)
        self.result_ = fit(problem, self.start, self.xatol, self.max_iter)
        self.delta_, self.alpha_ = self.result_.delta, self.result_.alpha
        self.problem_ = problem
        return self

    def predict(self, X=None):
        check_is_fitted(self, ["delta_", "alpha_"])
        return self.problem_.simulate(self.delta_, self.alpha_)

    def score(self, X, y=None):
        """Negative mean held-out error (m) against ``X``; higher is better."""
        check_is_fitted(self, ["delta_", "alpha_"])
        X = check_array(X, ensure_min_samples=2)
        err = trajectory_error(self.predict(), X, self.problem_.mass)
        return -err.mean
