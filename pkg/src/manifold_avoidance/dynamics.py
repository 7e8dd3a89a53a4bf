"""Euler-Lagrange dynamics of the collision-avoidance functional.

On R^n the necessary conditions read q'''' = -sum_j grad_1 V_ij (the metric
is flat). On S^2 each agent is lifted to a horizontal curve R_i(t) in SO(3)
with R' = R hat(xi), xi in span{e2, e3}, and the reduced equation

    xi''' = -xi x (xi' x xi) - sum_j lift(grad_1 V_ij)

is integrated, where lift() maps a tangent vector at R e1 to the horizontal
body vector with the same image. For such curves |Dq'/dt| = |xi'| and
|D^2 q'/dt^2| = |xi''|.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as K
from .geometry import DomainError, ManifoldId
from .potentials import InteractionGraph, SingularityError


class IntegrationError(ArithmeticError):
    """Integration aborted; ``t`` holds the time of the failing step."""

    def __init__(self, message: str, t: float, cause: type = ArithmeticError):
        super().__init__(f"{message} at t={t:.6g}")
        self.t = t
        self.cause = cause


@dataclass(frozen=True)
class EuclideanState:
    """Positions and the first three derivatives of every agent, shape (s, n)."""

    q: np.ndarray
    dq: np.ndarray
    d2q: np.ndarray
    d3q: np.ndarray
    t: float = 0.0

    @property
    def manifold(self) -> ManifoldId:
        return ManifoldId.euclidean(self.q.shape[1])

    @property
    def s(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True)
class SphereState:
    """Rotations (s, 3, 3) with body velocity xi and its derivatives (s, 3)."""

    R: np.ndarray
    xi: np.ndarray
    dxi: np.ndarray
    d2xi: np.ndarray
    t: float = 0.0

    @property
    def manifold(self) -> ManifoldId:
        return ManifoldId.sphere()

    @property
    def s(self) -> int:
        return self.R.shape[0]

    @property
    def q(self) -> np.ndarray:
        return self.R[:, :, 0].copy()


def _as_state_arrays(state):
    if isinstance(state, EuclideanState):
        return tuple(np.ascontiguousarray(a, dtype=float) for a in (state.q, state.dq, state.d2q, state.d3q))
    return tuple(np.ascontiguousarray(a, dtype=float) for a in (state.R, state.xi, state.dxi, state.d2xi))


@dataclass
class Trajectory:
    """Samples of a multi-agent curve on a time grid starting at 0.

    ``positions``/``velocities`` are ambient arrays of shape (N+1, s, n). The
    acceleration and jerk arrays are covariant derivatives expressed in the
    natural frame (ambient on R^n, body frame on S^2) and may be ``None`` for
    trajectories read back from CSV. Sphere runs also keep ``rotations`` and
    the body velocities ``body``.
    """

    manifold: ManifoldId
    T: float
    h: float
    t: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accel: np.ndarray | None = None
    jerk: np.ndarray | None = None
    rotations: np.ndarray | None = None
    body: np.ndarray | None = None

    @property
    def s(self) -> int:
        return self.positions.shape[1]

    def __len__(self) -> int:
        return len(self.t)

    def state(self, m: int):
        """Full state at sample ``m`` (needs derivative data)."""
        if self.accel is None or self.jerk is None:
            raise ValueError("trajectory has no derivative stack")
        if self.manifold.is_sphere:
            return SphereState(self.rotations[m], self.body[m], self.accel[m], self.jerk[m], float(self.t[m]))
        return EuclideanState(self.positions[m], self.velocities[m], self.accel[m], self.jerk[m],
                              float(self.t[m]))

    def pair_distances(self, i: int, j: int) -> np.ndarray:
        p = self.positions[:, i]
        q = self.positions[:, j]
        if self.manifold.is_sphere:
            c = np.cross(p, q)
            return np.arctan2(np.linalg.norm(c, axis=1), np.einsum("ij,ij->i", p, q))
        return np.linalg.norm(p - q, axis=1)

    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.velocities, axis=2)

    def accel_norm(self) -> np.ndarray:
        return np.linalg.norm(self.accel, axis=2)

    def jerk_norm(self) -> np.ndarray:
        return np.linalg.norm(self.jerk, axis=2)


def time_steps(T: float, h: float) -> np.ndarray:
    """Step sizes covering [0, T]: N - 1 steps of h and a last step landing on T."""
    if not h > 0:
        raise ValueError("step size h must be > 0")
    if not T > 0:
        raise ValueError("horizon T must be > 0")
    N = max(1, int(round(T / h)))
    if N * h < T - 1e-9 * T:
        N += 1
    steps = np.full(N, float(h))
    steps[-1] = T - (N - 1) * h
    if steps[-1] <= 0:
        raise ValueError(f"T/h = {T / h} is too far from an integer")
    return steps


def _time_grid(steps: np.ndarray, T: float) -> np.ndarray:
    t = np.concatenate([[0.0], np.arange(1, len(steps) + 1) * steps[0]])
    t[-1] = T
    return t


def _raise_status(status: int, t: float):
    if status == K.SINGULAR:
        raise IntegrationError("singular potential gradient (coincident agents)", t, SingularityError)
    if status == K.ANTIPODAL:
        raise IntegrationError("antipodal agents on the sphere", t, DomainError)
    if status == K.NONFINITE:
        raise IntegrationError("non-finite state", t, FloatingPointError)


def el_rhs_euclidean(state: EuclideanState, graph: InteractionGraph) -> np.ndarray:
    """Fourth derivative d^4 q_i/dt^4 = -sum_j grad_1 V_ij(q_i, q_j), shape (s, n)."""
    q = np.ascontiguousarray(state.q, dtype=float)
    out = np.empty_like(q)
    status = K.euclid_force(q, *graph.kernel_arrays(), out)
    _raise_status(status, state.t)
    return out


def reduced_rhs_so3(state: SphereState, graph: InteractionGraph) -> np.ndarray:
    """Third derivative of the horizontal body velocities, shape (s, 3)."""
    R, xi, dxi, _ = _as_state_arrays(state)
    out = np.empty_like(xi)
    status = K.sphere_rhs(R, xi, dxi, *graph.kernel_arrays(), out)
    _raise_status(status, state.t)
    return out


def lifted_gradients(state: SphereState, graph: InteractionGraph) -> np.ndarray:
    """sum_j lift(grad_1 V_ij) in body coordinates, shape (s, 3)."""
    R = np.ascontiguousarray(state.R, dtype=float)
    out = np.empty((R.shape[0], 3))
    status = K.sphere_lifted_gradients(R, *graph.kernel_arrays(), out)
    _raise_status(status, state.t)
    return out


METHODS = {"euler": K.EULER, "rk4": K.RK4}


def integrate(graph: InteractionGraph, initial, h: float, T: float, method: str = "rk4") -> Trajectory:
    """Integrate the Euler-Lagrange equations from ``initial`` over [0, T]."""
    if method not in METHODS:
        raise ValueError(f"unknown integration method {method!r}")
    if initial.s != graph.s:
        raise ValueError(f"state has {initial.s} agents, graph has {graph.s}")
    steps = time_steps(T, h)
    arrays = _as_state_arrays(initial)
    edges = graph.kernel_arrays()
    t = _time_grid(steps, T)
    if isinstance(initial, EuclideanState):
        q, dq, d2q, d3q, status, m = K.integrate_euclid(*arrays, steps, METHODS[method], *edges)
        if status != K.OK:
            _raise_status(status, float(t[m]))
        return Trajectory(initial.manifold, float(T), float(h), t, q, dq, d2q, d3q)
    R, xi, dxi, d2xi, status, m = K.integrate_sphere(*arrays, steps, METHODS[method], *edges)
    if status != K.OK:
        _raise_status(status, float(t[m]))
    positions = R[:, :, :, 0].copy()
    # q' = R (xi x e1) = R (0, xi3, -xi2)
    local = np.stack([np.zeros_like(xi[..., 0]), xi[..., 2], -xi[..., 1]], axis=-1)
    velocities = np.einsum("tsij,tsj->tsi", R, local)
    return Trajectory(initial.manifold, float(T), float(h), t, positions, velocities, dxi, d2xi,
                      rotations=R, body=xi)


def potential_energy(state, graph: InteractionGraph) -> float:
    """Sum of V_ij over undirected edges, each edge counted once."""
    edges = graph.kernel_arrays()
    if isinstance(state, EuclideanState):
        return float(K.euclid_potential_sum(np.ascontiguousarray(state.q, dtype=float), *edges))
    return float(K.sphere_potential_sum(np.ascontiguousarray(state.R, dtype=float), *edges))


def hamiltonian(state, graph: InteractionGraph) -> float:
    """Conserved quantity sum_i [<q', D^2q'> - |Dq'|^2/2 + sum_j V_ij/2].

    The half-weighted neighbour sum over all agents counts each undirected edge
    exactly once.
    """
    if isinstance(state, EuclideanState):
        vel, acc, jerk = state.dq, state.d2q, state.d3q
    else:
        vel, acc, jerk = state.xi, state.dxi, state.d2xi
    kinetic = float(np.sum(vel * jerk) - 0.5 * np.sum(acc * acc))
    return kinetic + potential_energy(state, graph)


def hamiltonian_series(traj: Trajectory, graph: InteractionGraph) -> np.ndarray:
    return np.array([hamiltonian(traj.state(m), graph) for m in range(len(traj))])


def potential_series(traj: Trajectory, graph: InteractionGraph) -> np.ndarray:
    """Per-agent sum_j V_ij(q_i, q_j) along the trajectory, shape (N+1, s)."""
    out = np.zeros((len(traj), traj.s))
    for (i, j), p in graph.params.items():
        if p is None:
            continue
        d = traj.pair_distances(i, j)
        v = np.array([p.value(x) for x in d])
        out[:, i] += v
        out[:, j] += v
    return out


CONVENTIONS = ("eqj", "proofj")


def functional_J(traj: Trajectory, graph: InteractionGraph, convention: str = "proofj") -> float:
    """Cost functional by composite trapezoid quadrature.

    ``eqj``:    1/2 sum_i int (|Dq_i'|^2 + 1/2 sum_j V_ij) dt
    ``proofj``:     sum_i int (|Dq_i'|^2 + 1/2 sum_j V_ij) dt
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown J convention {convention!r}")
    if traj.accel is None:
        raise ValueError("functional_J needs acceleration data")
    integrand = np.sum(traj.accel_norm() ** 2 + 0.5 * potential_series(traj, graph), axis=1)
    value = float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(traj.t)))
    return 0.5 * value if convention == "eqj" else value


def geodesic_state(state):
    """Copy of ``state`` with acceleration and jerk zeroed."""
    if isinstance(state, EuclideanState):
        return replace(state, d2q=np.zeros_like(state.d2q), d3q=np.zeros_like(state.d3q))
    return replace(state, dxi=np.zeros_like(state.dxi), d2xi=np.zeros_like(state.d2xi))


def is_horizontal(xi, tol: float = 1e-9) -> bool:
    return bool(np.all(np.abs(np.asarray(xi)[..., 0]) <= tol))


def rotation_defect(R) -> float:
    """max_i |R_i^T R_i - I| over a stack of rotations."""
    R = np.asarray(R)
    RtR = np.einsum("...ji,...jk->...ik", R, R)
    return float(np.max(np.linalg.norm(RtR - np.eye(3), axis=(-2, -1))))

