"""Collision, risk and safety regions and the two avoidance certificates.

Minimizer certificate: from a reference trajectory that keeps every edge in
its safety region (d >= R on every edge) compute

    a_i = sup |D q_i'/dt|,   c = T sum_i [a_i^2 + w sum_{j in N_i} V-_ij],
    v_i = sqrt(cT) + sqrt(cT + |v_i(0)|^2),

with w = 1 ("strict") or w = 1/2 ("half"). Every minimizer avoids collision
when V*_ij > c (v_i + v_j) / (2 (r*_ij - r_ij)) on each edge.

Bounded-derivative certificate: for critical points with uniform bounds on
speed, covariant acceleration and jerk, collision is avoided when
V*_ij > sum_i [a_i^2 + v_i eta_i + v_i(0) eta_i(0) + 1/2 sum_j V-_ij].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Trajectory
from .potentials import InteractionGraph, PotentialParams, eval_potential

COLLISION = "collision"
RISK = "risk"
INTERMEDIATE = "intermediate"
SAFETY = "safety"

CONVENTIONS = {"strict": 1.0, "half": 0.5}

EPS_MIN = 1e-12
SAFETY_BOUNDARY_SLACK = 1e-9


class InfeasibleError(ValueError):
    """Tolerances admit no tuned potential."""


class ReferenceError_(ValueError):
    """Reference trajectory leaves the safety region of some edge."""

    def __init__(self, edge, t, d, R):
        super().__init__(
            f"reference leaves the safety region of edge [{edge[0] + 1},{edge[1] + 1}] "
            f"at t={t:.6g} (distance {d:.6g} < R={R:.6g})"
        )
        self.edge = edge
        self.t = t


@dataclass(frozen=True)
class Tolerance:
    """Collision radius r, risk radius r_star and safety radius R of one edge."""

    r: float
    r_star: float
    R: float

    def __post_init__(self):
        if not (0 < self.r < self.r_star < self.R):
            if not self.r > 0:
                raise ValueError("r must be > 0")
            if not self.r < self.r_star:
                raise ValueError("r must be < r_star")
            raise ValueError("r_star must be < R")


def region_classify(tol: Tolerance, d: float) -> str:
    """Innermost region containing distance ``d``."""
    if d < tol.r:
        return COLLISION
    if d < tol.r_star:
        return RISK
    if d > tol.R:
        return SAFETY
    return INTERMEDIATE


@dataclass(frozen=True)
class EdgeAvoidance:
    edge: tuple
    min_distance: float
    t_min: float
    r: float

    @property
    def avoided(self) -> bool:
        return self.min_distance >= self.r


def _edge_r(tolerances, edge) -> float:
    if isinstance(tolerances, (int, float)):
        return float(tolerances)
    tol = tolerances[edge]
    return tol.r if isinstance(tol, Tolerance) else float(tol)


def check_avoidance(traj: Trajectory, tolerances, edges=None) -> list:
    """Per-edge grid minimum of the distance and whether it stays >= r.

    ``tolerances`` is a mapping edge -> Tolerance (or radius), or one radius
    applied to every edge; ``edges`` defaults to the mapping's keys.
    """
    if edges is None:
        edges = sorted(tolerances) if not isinstance(tolerances, (int, float)) else []
    out = []
    for e in edges:
        d = traj.pair_distances(*e)
        m = int(np.argmin(d))
        out.append(EdgeAvoidance(tuple(e), float(d[m]), float(traj.t[m]), _edge_r(tolerances, e)))
    return out


@dataclass
class ReferenceConstants:
    a: np.ndarray
    c: float
    v: np.ndarray
    Vminus: dict
    convention: str
    T: float
    v0: np.ndarray
    violations: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "reference_violations": [
                {"edge": [i + 1, j + 1], "t": t, "distance": d, "R": R} for (i, j), t, d, R in self.violations
            ],
            "a": [float(x) for x in self.a],
            "c": float(self.c),
            "v": [float(x) for x in self.v],
            "v0_norm": [float(x) for x in self.v0],
            "V_minus": {f"{i + 1}-{j + 1}": float(x) for (i, j), x in sorted(self.Vminus.items())},
            "convention": self.convention,
            "T": float(self.T),
        }


def energy_bound(a, graph: InteractionGraph, Vminus: dict, T: float, convention: str = "half") -> float:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    w = CONVENTIONS[convention]
    total = 0.0
    for i in range(graph.s):
        nb = sum(Vminus[(min(i, j), max(i, j))] for j in graph.neighbors(i))
        total += a[i] ** 2 + w * nb
    return T * total


def speed_bound(c: float, T: float, v0_norm) -> np.ndarray:
    v0_norm = np.asarray(v0_norm, dtype=float)
    return math.sqrt(c * T) + np.sqrt(c * T + v0_norm ** 2)


def reference_violations(ref: Trajectory, graph: InteractionGraph, tolerances: dict) -> list:
    """Per edge, the first sample where the reference is inside the safety radius.

    Entries are ``(edge, t, d_min, R)`` with ``t`` the first offending time and
    ``d_min`` the smallest distance over all offending samples. Contact with
    the boundary d = R counts as safe.
    """
    out = []
    for e in graph.edges:
        d = ref.pair_distances(*e)
        R = tolerances[e].R
        bad = np.nonzero(d < R - SAFETY_BOUNDARY_SLACK)[0]
        if bad.size:
            out.append((e, float(ref.t[bad[0]]), float(d[bad].min()), float(R)))
    return out


def reference_constants(ref: Trajectory, graph: InteractionGraph, tolerances: dict,
                        Vminus, convention: str = "half", accel_bounds=None,
                        enforce_safety: bool = True) -> ReferenceConstants:
    """Constants a_i, c, v_i of a safe reference trajectory.

    ``Vminus`` is one number or a mapping edge -> bound of V on the safety
    region. ``accel_bounds`` replaces the measured a_i when given. With
    ``enforce_safety=False`` violations of the safety region are recorded on
    the result instead of raising.
    """
    violations = reference_violations(ref, graph, tolerances)
    if violations and enforce_safety:
        e, t, _, R = violations[0]
        m = int(np.argmin(np.abs(ref.t - t)))
        raise ReferenceError_(e, t, float(ref.pair_distances(*e)[m]), R)
    if not isinstance(Vminus, dict):
        Vminus = {e: float(Vminus) for e in graph.edges}
    if accel_bounds is None:
        if ref.accel is None:
            raise ValueError("reference trajectory has no acceleration data")
        a = ref.accel_norm().max(axis=0)
    else:
        a = np.broadcast_to(np.asarray(accel_bounds, dtype=float), (graph.s,)).copy()
    c = energy_bound(a, graph, Vminus, ref.T, convention)
    v0 = np.linalg.norm(ref.velocities[0], axis=1)
    v = speed_bound(c, ref.T, v0)
    return ReferenceConstants(a, c, v, dict(Vminus), convention, ref.T, v0, violations)


@dataclass
class SafetyCertificate:
    kind: str  # "minimizer" or "bounded"
    thresholds: dict
    vstar: dict
    margins: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.margins:
            self.margins = {e: self.vstar[e] - self.thresholds[e] for e in self.thresholds}

    @property
    def passed(self) -> bool:
        return all(m > 0 for m in self.margins.values())

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "pass": self.passed,
            "edges": [
                {"edge": [i + 1, j + 1], "threshold": float(self.thresholds[(i, j)]),
                 "V_star": float(self.vstar[(i, j)]), "margin": float(self.margins[(i, j)])}
                for (i, j) in sorted(self.thresholds)
            ],
            **self.details,
        }


def minimizer_threshold(c: float, vi: float, vj: float, tol: Tolerance) -> float:
    return c * (vi + vj) / (2.0 * (tol.r_star - tol.r))


def certify_minimizer(consts: ReferenceConstants, tolerances: dict, Vstar) -> SafetyCertificate:
    """Check V*_ij > c (v_i + v_j) / (2 (r*_ij - r_ij)) on every edge (strictly)."""
    thresholds = {}
    for e, tol in tolerances.items():
        i, j = e
        thresholds[e] = minimizer_threshold(consts.c, consts.v[i], consts.v[j], tol)
    if not isinstance(Vstar, dict):
        Vstar = {e: float(Vstar) for e in thresholds}
    return SafetyCertificate("minimizer", thresholds, {e: float(Vstar[e]) for e in thresholds},
                             details={"constants": consts.as_dict()})


def risk_potential_bound(params: PotentialParams, tol: Tolerance) -> float:
    """V* for a concrete potential: its value at the risk radius (V is decreasing)."""
    return eval_potential(params, tol.r_star)


def tune_potential(tolerances: dict, consts: ReferenceConstants, eps_min: float = EPS_MIN) -> dict:
    """Per-edge inverse-family parameters certified with V* = 1/(2 eps), V- = 1.

    D = R, eps = (r* - r) / (2 c (v_i + v_j)), and k the smallest integer with
    (r*/R)^k <= eps so that V >= 1/(2 eps) on the risk region.
    """
    out = {}
    for e, tol in tolerances.items():
        i, j = e
        if tol.r >= tol.R:
            raise InfeasibleError(f"edge [{i + 1},{j + 1}]: r must be < R")
        eps = 0.5 * (tol.r_star - tol.r) / (consts.c * (consts.v[i] + consts.v[j]))
        if eps < eps_min:
            raise InfeasibleError(
                f"edge [{i + 1},{j + 1}]: required eps={eps:.3e} is below {eps_min:.0e} "
                f"(risk band r_star - r = {tol.r_star - tol.r:.3e} too thin)"
            )
        k = max(1, math.ceil(math.log(eps) / math.log(tol.r_star / tol.R) - 1e-12))
        while (tol.r_star / tol.R) ** k > eps:
            k += 1
        out[e] = PotentialParams("inverse", float(tol.R), float(eps), int(k))
    return out


@dataclass
class DerivativeBounds:
    v_max: np.ndarray
    a_max: np.ndarray
    eta_max: np.ndarray
    v0: np.ndarray
    eta0: np.ndarray

    def as_dict(self) -> dict:
        return {k: [float(x) for x in getattr(self, k)] for k in ("v_max", "a_max", "eta_max", "v0", "eta0")}


def measure_bounds(traj: Trajectory) -> DerivativeBounds:
    """Grid maxima of speed, covariant acceleration and covariant jerk per agent."""
    if traj.accel is None or traj.jerk is None:
        raise ValueError("trajectory has no derivative stack")
    speed = traj.speed()
    acc = traj.accel_norm()
    jerk = traj.jerk_norm()
    return DerivativeBounds(speed.max(axis=0), acc.max(axis=0), jerk.max(axis=0), speed[0], jerk[0])


def bounded_sum(bounds: DerivativeBounds, graph: InteractionGraph, Vminus: dict) -> float:
    total = 0.0
    for i in range(graph.s):
        nb = sum(Vminus[(min(i, j), max(i, j))] for j in graph.neighbors(i))
        total += (bounds.a_max[i] ** 2 + bounds.v_max[i] * bounds.eta_max[i]
                  + bounds.v0[i] * bounds.eta0[i] + 0.5 * nb)
    return float(total)


def certify_bounded(bounds: DerivativeBounds, graph: InteractionGraph, Vminus, Vstar) -> SafetyCertificate:
    """Check V*_ij > sum_i [a_i^2 + v_i eta_i + v_i(0) eta_i(0) + 1/2 sum_j V-_ij]."""
    if not isinstance(Vminus, dict):
        Vminus = {e: float(Vminus) for e in graph.edges}
    total = bounded_sum(bounds, graph, Vminus)
    if not isinstance(Vstar, dict):
        Vstar = {e: float(Vstar) for e in graph.edges}
    thresholds = {e: total for e in graph.edges}
    return SafetyCertificate("bounded", thresholds, {e: float(Vstar[e]) for e in graph.edges},
                             details={"sum": total, "bounds": bounds.as_dict(),
                                      "V_minus": {f"{i + 1}-{j + 1}": float(v) for (i, j), v in sorted(Vminus.items())}})


def radius_limit(params: PotentialParams, level: float) -> float:
    """Largest r with V(r) > level, i.e. the radius certified by a threshold ``level``.

    Returns 0 when even V(0) does not exceed the level. For the bump family the
    result is capped at its support radius D.
    """
    if params.family == "inverse":
        inv = 1.0 / level - params.eps
        if inv <= 0:
            return 0.0
        return params.D * inv ** (1.0 / params.k)
    # bump: (1/eps) exp(-1/(1 - x^k)) = level
    arg = level * params.eps
    if arg >= math.exp(-1.0):
        return 0.0
    u = -1.0 / math.log(arg)
    return params.D * (1.0 - u) ** (1.0 / params.k)
