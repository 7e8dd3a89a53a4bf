"""Shooting solver for the two-point boundary value problem.

The unknowns are the initial accelerations and jerks of all agents
(ambient d2q(0), d3q(0) on R^n; horizontal body xi'(0), xi''(0) on S^2, two
free components each). A downhill simplex search drives the terminal mismatch
in position and velocity to zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import EuclideanState, IntegrationError, SphereState, Trajectory, integrate
from .geometry import ManifoldId, body_from_spatial, sphere_angle, transport_sphere

log = logging.getLogger(__name__)

# Objective value of a shot that fails at time t: FAIL_PENALTY * (2 - t/T).
# Larger than any residual of interest and decreasing the longer a shot survives.
FAIL_PENALTY = 1e8


class ShootingError(ArithmeticError):
    """Integration failed for a particular vector of shooting unknowns."""

    def __init__(self, message: str, unknowns: np.ndarray, t: float = 0.0):
        super().__init__(f"{message}; unknowns={np.array2string(unknowns, precision=6)}")
        self.unknowns = unknowns
        self.t = t


@dataclass
class BoundaryConditions:
    """Positions and velocities at t = 0 and t = T for every agent.

    On S^2 ``R0`` holds lifts of the initial points (R0[i] e1 = q0[i]); the
    initial body velocity follows from ``v0``.
    """

    manifold: ManifoldId
    T: float
    q0: np.ndarray
    v0: np.ndarray
    qT: np.ndarray
    vT: np.ndarray
    R0: np.ndarray | None = None

    @property
    def s(self) -> int:
        return self.q0.shape[0]

    @property
    def dof(self) -> int:
        """Free components per derivative per agent."""
        return 2 if self.manifold.is_sphere else self.manifold.n

    @property
    def n_unknowns(self) -> int:
        return self.s * 2 * self.dof


@dataclass
class SolverOptions:
    ftol: float = 1e-10
    xtol: float = 1e-8
    max_evals: int | None = None  # default 50000 * dim
    tol: float = 1e-6  # residual accepted as converged
    w_p: float = 1.0
    w_v: float = 1.0
    restarts: int = 20
    guess: str = "cubic-init"

    def budget(self, dim: int) -> int:
        return int(self.max_evals) if self.max_evals is not None else 50000 * dim


@dataclass
class NelderMeadReport:
    iterations: int
    function_evals: int
    reason: str
    best_history: list = field(default_factory=list)


def initial_simplex(x0: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """x0 plus one vertex per coordinate, offset by max(0.1, 0.1 |x0_c|)."""
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    simplex = np.tile(x0, (n + 1, 1))
    for c in range(n):
        simplex[c + 1, c] += scale * max(0.1, 0.1 * abs(x0[c]))
    return simplex


def nelder_mead(objective, x0, ftol: float = 1e-10, xtol: float = 1e-8,
                max_evals: int | None = None, simplex: np.ndarray | None = None,
                target: float = -math.inf):
    """Downhill simplex minimization.

    Reflection, expansion, contraction and shrink use the coefficients
    1, 2, 1/2, 1/2. Stops when the spread of simplex values drops below
    ``ftol``, the simplex diameter (max-norm about the best vertex) drops below
    ``xtol``, the best value reaches ``target``, or ``max_evals`` is exhausted.

    Returns ``(xmin, fmin, report)``.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n = x0.size
    if max_evals is None:
        max_evals = 50000 * max(n, 1)
    pts = initial_simplex(x0) if simplex is None else np.array(simplex, dtype=float)
    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        return float(objective(x))

    vals = np.array([f(p) for p in pts])
    if not np.all(np.isfinite(vals)):
        raise ValueError("objective is not finite at the initial simplex")

    history = []
    iterations = 0
    reason = "max_evals"
    while True:
        order = np.argsort(vals, kind="stable")
        pts, vals = pts[order], vals[order]
        history.append(vals[0])
        if vals[-1] - vals[0] < ftol:
            reason = "ftol"
            break
        if np.max(np.abs(pts[1:] - pts[0])) < xtol:
            reason = "xtol"
            break
        if vals[0] <= target:
            reason = "target"
            break
        if evals >= max_evals:
            break
        iterations += 1
        centroid = pts[:-1].mean(axis=0)
        worst = pts[-1]
        xr = centroid + (centroid - worst)
        fr = f(xr)
        if fr < vals[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = f(xe)
            if fe < fr:
                pts[-1], vals[-1] = xe, fe
            else:
                pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-2]:
            pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                pts[-1], vals[-1] = xc, fc
                continue
        else:
            xc = centroid + 0.5 * (worst - centroid)
            fc = f(xc)
            if fc < vals[-1]:
                pts[-1], vals[-1] = xc, fc
                continue
        for m in range(1, n + 1):
            pts[m] = pts[0] + 0.5 * (pts[m] - pts[0])
            vals[m] = f(pts[m])
    return pts[0].copy(), float(vals[0]), NelderMeadReport(iterations, evals, reason, history)


def hermite_cubic_coefficients(q0, v0, qT, vT, T):
    """Acceleration and jerk at t = 0 of the cubic matching both endpoints."""
    q0, v0, qT, vT = (np.asarray(a, dtype=float) for a in (q0, v0, qT, vT))
    d = qT - q0
    a2 = (3.0 * d - T * (2.0 * v0 + vT)) / T ** 2
    a3 = (-2.0 * d + T * (v0 + vT)) / T ** 3
    return 2.0 * a2, 6.0 * a3


def hermite_cubic(q0, v0, qT, vT, T, t):
    """Position, velocity and acceleration of the Hermite cubic at times ``t``."""
    acc0, jerk = hermite_cubic_coefficients(q0, v0, qT, vT, T)
    t = np.asarray(t, dtype=float)[..., None]
    q = q0 + v0 * t + 0.5 * acc0 * t ** 2 + jerk * t ** 3 / 6.0
    v = v0 + acc0 * t + 0.5 * jerk * t ** 2
    a = acc0 + jerk * t
    return q, v, a


def initial_state(bc: BoundaryConditions, unknowns) -> EuclideanState | SphereState:
    x = np.asarray(unknowns, dtype=float).reshape(bc.s, 2, bc.dof)
    if not bc.manifold.is_sphere:
        return EuclideanState(bc.q0.copy(), bc.v0.copy(), x[:, 0].copy(), x[:, 1].copy())
    xi = np.array([body_from_spatial(R, v) for R, v in zip(bc.R0, bc.v0)])
    pad = np.zeros((bc.s, 2, 1))
    full = np.concatenate([pad, x], axis=2)
    return SphereState(bc.R0.copy(), xi, full[:, 0].copy(), full[:, 1].copy())


def cubic_guess(bc: BoundaryConditions) -> np.ndarray:
    """Unknowns of the zero-potential solution (Hermite cubics) on R^n; zeros on S^2."""
    if bc.manifold.is_sphere:
        return np.zeros(bc.n_unknowns)
    acc, jerk = hermite_cubic_coefficients(bc.q0, bc.v0, bc.qT, bc.vT, bc.T)
    return np.stack([acc, jerk], axis=1).ravel()


def terminal_mismatch(bc: BoundaryConditions, traj: Trajectory, w_p: float = 1.0, w_v: float = 1.0) -> float:
    q = traj.positions[-1]
    v = traj.velocities[-1]
    if not bc.manifold.is_sphere:
        ep = np.sum((q - bc.qT) ** 2)
        ev = np.sum((v - bc.vT) ** 2)
    else:
        ep = 0.0
        ev = 0.0
        for i in range(bc.s):
            ep += sphere_angle(q[i], bc.qT[i]) ** 2
            target = transport_sphere(bc.qT[i], q[i], bc.vT[i])
            ev += float(np.sum((v[i] - target) ** 2))
    return math.sqrt(w_p * ep + w_v * ev)


def _integrator(scenario):
    return scenario.method, scenario.h


def shoot(scenario, unknowns, graph=None) -> Trajectory:
    """Integrate from the boundary data at t = 0 completed by ``unknowns``."""
    bc = scenario.boundary
    method, h = _integrator(scenario)
    state = initial_state(bc, unknowns)
    return integrate(graph if graph is not None else scenario.graph, state, h, bc.T, method)


def residual(scenario, unknowns, graph=None, options: SolverOptions | None = None) -> float:
    """Weighted terminal mismatch of the shot started from ``unknowns``."""
    opts = options or scenario.solver
    unknowns = np.asarray(unknowns, dtype=float)
    try:
        traj = shoot(scenario, unknowns, graph)
    except IntegrationError as exc:
        raise ShootingError(str(exc), unknowns, exc.t) from exc
    return terminal_mismatch(scenario.boundary, traj, opts.w_p, opts.w_v)


@dataclass
class SolveReport:
    converged: bool
    residual: float
    iterations: int
    function_evals: int
    trajectory: Trajectory
    unknowns: np.ndarray
    restarts: int = 0
    reason: str = ""
    singular_hits: int = 0

    def summary(self) -> dict:
        return {
            "converged": bool(self.converged),
            "residual": float(self.residual),
            "iterations": int(self.iterations),
            "function_evals": int(self.function_evals),
            "restarts": int(self.restarts),
            "termination": self.reason,
            "singular_evaluations": int(self.singular_hits),
            "unknowns": [float(x) for x in self.unknowns],
        }


def _guess_vector(scenario, guess) -> np.ndarray:
    bc = scenario.boundary
    if isinstance(guess, str):
        if guess == "zero":
            return np.zeros(bc.n_unknowns)
        if guess == "cubic-init":
            return cubic_guess(bc)
        raise ValueError(f"unknown initial guess {guess!r}")
    x = np.asarray(guess, dtype=float).ravel()
    if x.size != bc.n_unknowns:
        raise ValueError(f"guess has {x.size} entries, expected {bc.n_unknowns}")
    return x


def solve_bvp(scenario, guess=None, options: SolverOptions | None = None, graph=None) -> SolveReport:
    """Shooting with restarted Nelder-Mead on the residual.

    Each restart rebuilds the simplex around the best point so far; the loop
    stops when the residual reaches ``options.tol``, a restart brings no
    improvement, the restart count is spent, or the evaluation budget runs out.
    """
    opts = options or scenario.solver
    graph = graph if graph is not None else scenario.graph
    x = _guess_vector(scenario, opts.guess if guess is None else guess)
    budget = opts.budget(x.size)
    singular = 0

    def objective(u):
        nonlocal singular
        try:
            return min(residual(scenario, u, graph, opts), FAIL_PENALTY)
        except ShootingError as exc:
            singular += 1
            return FAIL_PENALTY * (2.0 - exc.t / scenario.boundary.T)

    total_evals = 0
    total_iters = 0
    restarts = 0
    reason = ""
    best_f = objective(x)
    total_evals += 1
    scale = 1.0
    inflated = False
    while best_f > opts.tol and total_evals < budget:
        simplex = initial_simplex(x, scale)
        try:
            xm, fm, rep = nelder_mead(objective, x, opts.ftol, opts.xtol, budget - total_evals,
                                      simplex=simplex, target=opts.tol)
        except ValueError:
            # a simplex vertex hit a singular configuration
            if inflated:
                reason = "singular"
                break
            inflated = True
            scale *= 10.0
            continue
        total_evals += rep.function_evals
        total_iters += rep.iterations
        reason = rep.reason
        improved = fm < best_f * (1.0 - 1e-9)
        if fm <= best_f:
            x, best_f = xm, fm
        log.debug("restart %d: residual %.3e (%s, %d evals)", restarts, best_f, rep.reason, rep.function_evals)
        if best_f <= opts.tol:
            break
        if not improved:
            if singular and not inflated:
                inflated = True
                scale *= 10.0
                continue
            break
        if restarts >= opts.restarts:
            break
        restarts += 1
    traj = shoot(scenario, x, graph)
    return SolveReport(best_f <= opts.tol, best_f, total_iters, total_evals, traj, x,
                       restarts, reason or "initial", singular)
