"""Repulsive pair potentials and their gradients in the first argument.

Two families are provided:

* ``inverse``: V(d) = 1 / (eps + (d/D)^k), bounded by 1/eps and strictly
  decreasing in the distance d.
* ``bump``:    V(d) = exp(-1 / (1 - (d/D)^k)) / eps for d < D, and 0 beyond,
  a smooth function with compact support.

Gradients are formed by the chain rule grad_1 V = V'(d) grad_1 d with
grad_1 d(p, q) = -log_p(q) / d, so -grad_1 V points from q towards p (repulsion).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .geometry import CUT_LOCUS_TOL, DomainError, ManifoldId, log_map, sphere_angle

INVERSE = 0
BUMP = 1
FAMILIES = {"inverse": INVERSE, "bump": BUMP}


class SingularityError(ArithmeticError):
    """Gradient requested where the potential is not differentiable."""


@dataclass(frozen=True)
class PotentialParams:
    family: str = "inverse"
    D: float = 1.0
    eps: float = 1e-5
    k: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown potential family {self.family!r}")
        if not self.D > 0:
            raise ValueError("potential.D must be > 0")
        if not self.eps > 0:
            raise ValueError("potential.eps must be > 0")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("potential.k must be a positive integer")

    @property
    def code(self) -> int:
        return FAMILIES[self.family]

    def value(self, d: float) -> float:
        return eval_potential(self, d)


@dataclass
class InteractionGraph:
    """Undirected graph over ``s`` agents with one potential per edge.

    Edges are stored 0-based as ordered pairs (i, j) with i < j. An edge whose
    params are ``None`` carries no potential (V = 0).
    """

    s: int
    edges: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.s < 2:
            raise ValueError("an interaction graph needs at least 2 agents")
        normalized = []
        params = {}
        for e in self.edges:
            i, j = int(e[0]), int(e[1])
            if i == j:
                raise ValueError(f"self loop at agent {i}")
            if not (0 <= i < self.s and 0 <= j < self.s):
                raise ValueError(f"edge ({i}, {j}) out of range for {self.s} agents")
            key = (min(i, j), max(i, j))
            if key in params:
                continue
            normalized.append(key)
            p = self.params.get((i, j), self.params.get((j, i)))
            params[key] = p
        self.edges = normalized
        self.params = params

    @classmethod
    def uniform(cls, s: int, edges, params: PotentialParams | None) -> "InteractionGraph":
        return cls(s, list(edges), {(min(i, j), max(i, j)): params for i, j in edges})

    def neighbors(self, i: int) -> list:
        return sorted([b if a == i else a for a, b in self.edges if i in (a, b)])

    def edge_params(self, i: int, j: int):
        return self.params[(min(i, j), max(i, j))]

    def degree(self, i: int) -> int:
        return len(self.neighbors(i))

    def with_params(self, params: dict) -> "InteractionGraph":
        return InteractionGraph(self.s, list(self.edges), dict(params))

    def without_potential(self) -> "InteractionGraph":
        return InteractionGraph(self.s, list(self.edges), {e: None for e in self.edges})

    def kernel_arrays(self):
        """Flat per-edge arrays consumed by the compiled integrators."""
        live = [(e, p) for e, p in self.params.items() if p is not None]
        m = len(live)
        ei = np.empty(m, dtype=np.int64)
        ej = np.empty(m, dtype=np.int64)
        fam = np.empty(m, dtype=np.int64)
        D = np.empty(m)
        eps = np.empty(m)
        k = np.empty(m)
        for idx, ((i, j), p) in enumerate(sorted(live)):
            ei[idx], ej[idx] = i, j
            fam[idx], D[idx], eps[idx], k[idx] = p.code, p.D, p.eps, p.k
        return ei, ej, fam, D, eps, k


@njit(cache=True)
def _value(family, D, eps, k, d):
    x = d / D
    if family == INVERSE:
        return 1.0 / (eps + x ** k)
    if x >= 1.0:
        return 0.0
    u = 1.0 - x ** k
    return math.exp(-1.0 / u) / eps


@njit(cache=True)
def _deriv(family, D, eps, k, d):
    """dV/dd."""
    x = d / D
    if family == INVERSE:
        den = eps + x ** k
        if x == 0.0:
            return -1.0 / (D * eps * eps) if k == 1 else 0.0
        return -(k / D) * x ** (k - 1) / (den * den)
    if x >= 1.0:
        return 0.0
    u = 1.0 - x ** k
    if u < 1e-3:
        return 0.0  # exp(-1000) underflows to 0
    return -math.exp(-1.0 / u) / eps * (k / D) * x ** (k - 1) / (u * u)


@njit(cache=True)
def _deriv_over_d(family, D, eps, k, d):
    """V'(d)/d, finite at d = 0 whenever k >= 2."""
    x = d / D
    if family == INVERSE:
        den = eps + x ** k
        return -(k / (D * D)) * x ** (k - 2) / (den * den)
    if x >= 1.0:
        return 0.0
    u = 1.0 - x ** k
    if u < 1e-3:
        return 0.0
    return -math.exp(-1.0 / u) / eps * (k / (D * D)) * x ** (k - 2) / (u * u)


def eval_potential(params: PotentialParams | None, d: float) -> float:
    """Potential value at distance ``d`` (``None`` params mean V = 0)."""
    if d < 0:
        raise ValueError("distance must be non-negative")
    if params is None:
        return 0.0
    return float(_value(params.code, float(params.D), float(params.eps), float(params.k), float(d)))


def potential_derivative(params: PotentialParams | None, d: float) -> float:
    """Derivative of the potential with respect to the distance."""
    if params is None:
        return 0.0
    return float(_deriv(params.code, float(params.D), float(params.eps), float(params.k), float(d)))


def grad1_potential(manifold: ManifoldId, params: PotentialParams | None, p, q) -> np.ndarray:
    """Riemannian gradient of V(d(p, q)) with respect to ``p``, as an ambient vector at p."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if params is None:
        return np.zeros_like(p)
    if manifold.is_sphere:
        phi = sphere_angle(p, q)
        if phi > math.pi - CUT_LOCUS_TOL:
            raise DomainError("antipodal points, potential gradient undefined")
        d = phi
    else:
        d = float(np.linalg.norm(q - p))
    if d == 0.0:
        if params.k < 2:
            raise SingularityError("potential gradient singular at d = 0 for k < 2")
        return np.zeros_like(p)
    log = log_map(manifold, p, q)
    if params.k < 2:
        coeff = potential_derivative(params, d) / d
    else:
        coeff = float(_deriv_over_d(params.code, float(params.D), float(params.eps),
                                    float(params.k), d))
    # log has length d, so -log/d is the unit gradient of the distance
    return -coeff * log


def pair_potential_symmetry_check(graph: InteractionGraph, manifold: ManifoldId, p, q,
                                  raw_params: dict | None = None) -> bool:
    """True when every edge potential is symmetric in its arguments and its orientation.

    ``raw_params`` may hold directed per-edge parameters (i, j) -> params, as
    they come out of a scenario file before normalization.
    """
    table = raw_params if raw_params is not None else graph.params
    for (i, j) in graph.edges:
        a = table.get((i, j))
        b = table.get((j, i), a)
        if a is None and b is None:
            continue
        if a is None or b is None:
            return False
        d_pq = _distance(manifold, p, q)
        d_qp = _distance(manifold, q, p)
        vals = (eval_potential(a, d_pq), eval_potential(a, d_qp),
                eval_potential(b, d_pq), eval_potential(b, d_qp))
        if max(vals) - min(vals) > 0.0:
            return False
    return True


def _distance(manifold, p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if manifold.is_sphere:
        return sphere_angle(p, q)
    return float(np.linalg.norm(q - p))
