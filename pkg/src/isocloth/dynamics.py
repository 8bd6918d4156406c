"""Time integration: implicit-Euler predictor, fast projection, contact QPs."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import qdldl
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import LumpedMass, assemble_bending, assemble_lumped_mass
from .constraints import ConstraintSystem
from .mesh import Mesh, stack, unstack

logger = logging.getLogger(__name__)

GRAVITY = 9.8
CONTACT_TOL = 1e-6  # admissible penetration, m
DEFAULT_DT = 0.01
DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 50
REGULARIZATION = 1e-10  # diagonal shift, relative to trace/n_c
DEFAULT_MAX_REFINE = 4
POLISH = 0  # extra projection iterations once the tolerance is met


class StepError(RuntimeError):
    pass


class SimulationError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step} failed: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class PhysParams:
    """Density ``rho``, virtual gravitational mass ``delta`` (kg/m^2), bending
    stiffness ``kappa`` and Rayleigh damping coefficients ``alpha`` (1/s), ``beta`` (s)."""

    rho: float = 1.0
    delta: float = 1.0
    kappa: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        for name in ("delta", "kappa", "alpha", "beta"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be a non-negative number, got {value}")


@dataclass
class SimState:
    phi: np.ndarray
    v: np.ndarray
    t: float = 0.0


@dataclass
class StepReport:
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True
    active_contacts: int = 0
    min_clearance: float = float("inf")
    pivots: int = 0
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    active_clearance: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("multipliers")
        out.pop("active_clearance")
        if not np.isfinite(out["min_clearance"]):
            out["min_clearance"] = None
        return out


class Operators:
    """Everything assembled once per mesh: lumped mass, stiffness and constraints."""

    def __init__(self, mass: LumpedMass, K, system: ConstraintSystem, mesh: Mesh | None = None):
        self.mesh = mesh
        self.mass = mass
        self.K = None if K is None else sp.csr_matrix(K)
        self.system = system
        self._solvers = {}

    @classmethod
    def from_mesh(cls, mesh: Mesh, handle_nodes=(), targets=None, bending: bool = True):
        mass = assemble_lumped_mass(mesh)
        K = assemble_bending(mesh, mass).K if bending else None
        system = ConstraintSystem.from_mesh(mesh, mass, handle_nodes, targets)
        return cls(mass, K, system, mesh)

    @property
    def n(self) -> int:
        return self.mass.n

    def implicit_solver(self, params: PhysParams, dt: float):
        key = (params.rho, params.alpha, params.beta, params.kappa, dt)
        if key not in self._solvers:
            m = self.mass.m
            diag = (params.rho + dt * params.alpha) * m
            stiff = dt * params.beta + dt * dt * params.kappa
            if self.K is None or stiff == 0.0:
                self._solvers[key] = lambda rhs, d=diag: rhs / d[:, None]
            else:
                A = (sp.diags(diag) + stiff * self.K).tocsc()
                try:
                    lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
                except RuntimeError as exc:
                    raise StepError(f"implicit system factorization failed: {exc}") from exc
                self._solvers[key] = lu.solve
        return self._solvers[key]


def unconstrained_step(state: SimState, params: PhysParams, ops: Operators, dt: float) -> np.ndarray:
    """Implicit-Euler predictor ignoring the constraints.

    Solves ``(rho M + dt D + dt^2 kappa K) v* = rho M v + dt (F_ext - kappa K phi)``
    with ``D = alpha M + beta K`` and returns ``phi + dt v*``.
    """
    X = unstack(state.phi)
    V = unstack(state.v)
    m = ops.mass.m
    force = np.zeros_like(X)
    force[:, 2] = -params.delta * m * GRAVITY
    if ops.K is not None and params.kappa:
        force -= params.kappa * (ops.K @ X)
    rhs = params.rho * m[:, None] * V + dt * force
    Vstar = ops.implicit_solver(params, dt)(rhs)
    if not np.all(np.isfinite(Vstar)):
        raise StepError("non-finite velocity in the unconstrained step")
    return stack(X + dt * Vstar)


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


class NormalSolver:
    """Regularized LDL^T solves of ``B M^-1 B^T``.

    The symbolic factorization is reused while the sparsity pattern is
    unchanged, which is the common case between projection iterations.
    """

    def __init__(self, regularization=REGULARIZATION):
        self.regularization = regularization
        self._solver = None
        self._pattern = None

    def solve(self, A: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
        k = A.shape[0]
        if k == 0:
            return np.zeros(0)
        shift = self.regularization * max(A.diagonal().sum() / k, np.finfo(float).tiny)
        U = sp.triu(A + shift * sp.identity(k, format="csr"), format="csc")
        U.sort_indices()
        pattern = (U.shape, U.indptr.tobytes(), U.indices.tobytes())
        try:
            if self._solver is not None and pattern == self._pattern:
                self._solver.update(U)
            else:
                self._solver = qdldl.Solver(U)
                self._pattern = pattern
            x = self._solver.solve(rhs)
        except Exception as exc:  # qdldl raises plain ValueError/RuntimeError
            self._solver = None
            raise StepError(f"projection system factorization failed: {exc}") from exc
        return x


def _contact_rows(obstacles, X, exclude):
    """Clearances ``H`` and gradient rows for every (obstacle, free node) pair."""
    n = len(X)
    free = np.setdiff1d(np.arange(n), exclude)
    Hs, grads, nodes = [], [], []
    for obs in obstacles:
        H, g = obs.evaluate(X[free])
        Hs.append(H)
        grads.append(g)
        nodes.append(free)
    if not Hs:
        return np.zeros(0), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    return np.concatenate(Hs), np.concatenate(grads), np.concatenate(nodes)


def _gradient_matrix(grad, nodes, n) -> sp.csr_matrix:
    k = len(nodes)
    rows = np.repeat(np.arange(k), 3)
    cols = (nodes[:, None] + n * np.arange(3)[None, :]).ravel()
    return sp.csr_matrix((grad.ravel(), (rows, cols)), shape=(k, 3 * n))


def _solve_qp(J, C, minv, H, G, active, max_pivots, solver):
    """Active-set solve of ``min 1/2 d^T M d`` s.t. ``J d = -C``, ``G d >= -H``.

    Returns the step, the final active set, the multipliers of the active
    rows and the number of pivots.
    """
    nc = J.shape[0]
    active = sorted(active)
    Minv = sp.diags(minv)
    for pivot in range(max_pivots + 1):
        B = sp.vstack([J, G[active]], format="csr") if active else J
        rhs = np.concatenate([C, H[active]])
        mu = solver.solve((B @ Minv @ B.T).tocsr(), rhs)
        dphi = -minv * (B.T @ mu)
        gamma = -mu[nc:]
        if len(gamma) and gamma.min() < -1e-12 * (1.0 + np.abs(gamma).max()):
            active.pop(int(np.argmin(gamma)))
            continue
        if len(H):
            slack = H + G @ dphi
            slack[active] = np.inf
            violated = np.flatnonzero(slack < -1e-12)
            if len(violated):
                active = sorted(set(active) | set(violated.tolist()))
                continue
        return dphi, active, gamma, pivot
    raise StepError("active-set pivot limit reached")


def _project(system, mass, phi0, obstacles=(), tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, active=None,
             regularization=REGULARIZATION, polish=POLISH):
    minv = 1.0 / mass.diagonal
    phi = np.array(phi0, dtype=float, copy=True)
    n = system.n
    active = set() if active is None else set(active)
    report = StepReport()
    gamma = np.zeros(0)
    solver = NormalSolver(regularization)
    for it in range(max_iter + 1):
        J = system.jacobian(phi)
        C = system.values(phi, J)
        res = system.relative_residual(C)
        H, grad, nodes = _contact_rows(obstacles, unstack(phi), system.handle_nodes)
        hmin = float(H.min()) if len(H) else float("inf")
        report.iterations = it
        report.residual = res
        report.min_clearance = hmin
        ok = res <= tol and hmin >= -CONTACT_TOL
        report.converged = ok
        if ok and (it == 0 or polish == 0 or it >= max_iter):
            break
        if ok:
            polish -= 1
        elif it >= max_iter:
            break
        G = _gradient_matrix(grad, nodes, n)
        candidates = np.count_nonzero(H < 0) + len(active)
        try:
            dphi, active_list, gamma, pivots = _solve_qp(
                J, C, minv, H, G, active, 10 * max(candidates, 1), solver
            )
        except StepError:
            report.converged = False
            break
        report.pivots += pivots
        active = set(active_list)
        phi = phi + dphi
        if not np.all(np.isfinite(phi)):
            raise StepError("projection diverged")
    if obstacles:
        H, _, _ = _contact_rows(obstacles, unstack(phi), system.handle_nodes)
        act = sorted(active)
        report.active_contacts = len(act)
        report.multipliers = gamma if len(gamma) == len(act) else np.zeros(len(act))
        report.active_clearance = H[act] if len(H) else np.zeros(0)
    return phi, report, active


def fast_projection(system, mass, phi0, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Project ``phi0`` onto ``C = 0`` by a sequence of linearly constrained QPs.

    Each iteration solves ``(J M^-1 J^T) dl = C`` and moves by ``-M^-1 J^T dl``.
    """
    phi, report, _ = _project(system, mass, phi0, (), tol, max_iter)
    return phi, report


def step_with_contact(system, mass, phi0, obstacles, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, active=None,
                      regularization=REGULARIZATION, polish=POLISH):
    """Fast projection with non-penetration ``H >= 0`` rows handled by an active set.

    Returns ``(phi, report, active_set)``; feed ``active_set`` back in to
    warm-start the next step.
    """
    return _project(system, mass, phi0, tuple(obstacles), tol, max_iter, active, regularization, polish)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    dt: float
    times: np.ndarray
    frames: np.ndarray  # (frames, 3n) stacked positions
    reports: list = field(default_factory=list)
    header: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.frames.shape[1] // 3

    @property
    def flagged_steps(self) -> list:
        return [i + 1 for i, r in enumerate(self.reports) if not r.converged]

    def positions(self, frame: int) -> np.ndarray:
        return unstack(self.frames[frame])


def _merge(reports) -> StepReport:
    last = reports[-1]
    return StepReport(
        iterations=sum(r.iterations for r in reports),
        residual=last.residual,
        converged=all(r.converged for r in reports),
        active_contacts=last.active_contacts,
        min_clearance=min(r.min_clearance for r in reports),
        pivots=sum(r.pivots for r in reports),
        multipliers=last.multipliers,
        active_clearance=last.active_clearance,
    )


class Stepper:
    """One projected implicit-Euler step, halving ``dt`` when projection stalls."""

    def __init__(self, ops, params, targets_at=None, obstacles=(), tol=DEFAULT_TOL,
                 max_iter=DEFAULT_MAX_ITER, max_refine=DEFAULT_MAX_REFINE,
                 regularization=REGULARIZATION, polish=POLISH):
        self.ops = ops
        self.params = params
        self.targets_at = targets_at
        self.obstacles = tuple(obstacles)
        self.tol = tol
        self.max_iter = max_iter
        self.max_refine = max_refine
        self.regularization = regularization
        self.polish = polish
        self.active = set()
        self._hcols = ops.system.handle_columns()

    def step(self, state: SimState, dt: float, depth: int = 0, t_end: float | None = None):
        system = self.ops.system
        t = state.t + dt if t_end is None else t_end
        if system.n_handles and self.targets_at is not None:
            system.targets = np.asarray(self.targets_at(t), dtype=float).reshape(-1, 3)
        phi0 = unconstrained_step(state, self.params, self.ops, dt)
        # handle_columns() is node-major, matching targets.ravel()
        phi0[self._hcols] = system.targets.ravel()
        phi, report, active = step_with_contact(
            system, self.ops.mass, phi0, self.obstacles, self.tol, self.max_iter, self.active,
            self.regularization, self.polish,
        )
        if not report.converged and depth < self.max_refine:
            half, first = self.step(state, 0.5 * dt, depth + 1)
            half = SimState(half.phi, half.v, state.t + 0.5 * dt)
            end, second = self.step(half, 0.5 * dt, depth + 1, t)
            return SimState(end.phi, (end.phi - state.phi) / dt, t), _merge([first, second])
        self.active = active
        phi[self._hcols] = system.targets.ravel()
        return SimState(phi, (phi - state.phi) / dt, t), report


def integrate(
    ops,
    params,
    phi_init,
    dt,
    steps,
    targets_at=None,
    obstacles=(),
    tol=DEFAULT_TOL,
    max_iter=DEFAULT_MAX_ITER,
    stride=1,
    v_init=None,
    substeps=1,
    max_refine=DEFAULT_MAX_REFINE,
    regularization=REGULARIZATION,
    polish=POLISH,
):
    """Advance ``steps`` time steps of length ``dt`` from ``phi_init``.

    ``targets_at(t)`` returns the ``(n_handles, 3)`` handle positions at time
    ``t``. Each step is split into ``substeps`` projected sub-steps; a
    sub-step whose projection does not converge is retried as two halves, at
    most ``max_refine`` times. ``regularization`` shifts the normal matrix
    by that fraction of its mean diagonal; ``polish`` adds projection
    iterations after the tolerance is met. Together they damp the
    near-singular hourglass directions of coarse quad grids.
    """
    v = np.zeros(3 * ops.n) if v_init is None else np.array(v_init, dtype=float)
    state = SimState(np.array(phi_init, dtype=float), v, 0.0)
    stepper = Stepper(ops, params, targets_at, obstacles, tol, max_iter, max_refine, regularization, polish)
    h = dt / substeps
    times, frames, reports = [0.0], [state.phi.copy()], []
    for s in range(1, steps + 1):
        parts = []
        for k in range(substeps):
            start = SimState(state.phi, state.v, (s - 1) * dt + k * h)
            # the last sub-step lands exactly on the recorded frame time
            t_end = s * dt if k == substeps - 1 else (s - 1) * dt + (k + 1) * h
            try:
                state, report = stepper.step(start, h, t_end=t_end)
            except StepError as exc:
                raise SimulationError(s, exc) from exc
            parts.append(report)
        state = SimState(state.phi, state.v, s * dt)
        report = _merge(parts)
        if not report.converged:
            logger.warning("step %d: projection stopped at residual %.3g", s, report.residual)
        reports.append(report)
        if s % stride == 0 or s == steps:
            times.append(s * dt)
            frames.append(state.phi.copy())
    return Trajectory(dt, np.array(times), np.array(frames), reports)


def simulate(scenario) -> Trajectory:
    """Run a :class:`~isocloth.scenario.Scenario` from rest."""
    mesh = scenario.mesh
    handle_nodes = scenario.handle_nodes()
    p = scenario.params
    ops = Operators.from_mesh(
        mesh, handle_nodes, scenario.handle_targets(0.0), bending=p.kappa > 0 or p.beta > 0
    )
    steps = int(round(scenario.duration / scenario.dt))
    traj = integrate(
        ops,
        scenario.params,
        stack(scenario.initial_positions()),
        scenario.dt,
        steps,
        scenario.handle_targets,
        scenario.obstacles,
        scenario.tol,
        scenario.max_iter,
        scenario.stride,
        substeps=scenario.substeps,
        max_refine=scenario.max_refine,
        regularization=scenario.regularization,
        polish=scenario.polish,
    )
    traj.header = {"n": mesh.n, "dt": scenario.dt, "params": asdict(p)}
    return traj
