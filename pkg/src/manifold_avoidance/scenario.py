"""Scenario files, reference trajectories and output serialization.

A scenario is a JSON document::

    {
      "name": "...",                       optional label
      "manifold": "r3" | "s2" | "rN",
      "T": 4.0,
      "agents": [...],                     per agent boundary data
      "terminal": "geodesic",              S^2 only, optional
      "edges": [[1, 2], ...],              1-based agent indices
      "potential": {"family", "D", "eps", "k"} | null,
      "edge_potentials": [{"edge": [i, j], "family", "D", "eps", "k"}, ...],
      "tolerances": {"r", "r_star", "R"},
      "edge_tolerances": [{"edge": [i, j], "r", "r_star", "R"}, ...],
      "integrator": {"method", "h"},
      "solver": {"tol", "ftol", "xtol", "max_evals", "restarts", "w_p", "w_v", "guess"},
      "reference": {"agents": [{"waypoints": [...], "segments": [...]}, ...]},
      "certificate": {"convention", "V_minus", "accel_bound", "V_star", "reference_check"}
    }

Euclidean agents carry ``q0, v0, qT, vT``. Sphere agents carry either
``R0`` (3x3 rotation, row-major, R0 e1 the initial point) and ``xi0`` (body
velocity) or ``q0, v0``; terminal data is ``qT, vT`` unless ``"terminal":
"geodesic"`` asks for the endpoint of the potential-free flow from the
initial data.
"""

from __future__ import annotations

import copy
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bvp import BoundaryConditions, SolverOptions
from .dynamics import METHODS, SphereState, Trajectory, integrate, time_steps, _time_grid
from .geometry import (
    ManifoldId,
    is_rotation,
    reorthonormalize,
    rotation_with_first_column,
    spatial_from_body,
)
from .potentials import InteractionGraph, PotentialParams, pair_potential_symmetry_check
from .safety import CONVENTIONS, Tolerance

JUNCTION_TOL = 1e-9
ROTATION_INPUT_TOL = 1e-6


class ScenarioError(ValueError):
    """Invalid scenario document; the message starts with the offending field path."""


class RecipeError(ValueError):
    """Reference recipe whose pieces do not join continuously."""


# -- reference recipes -------------------------------------------------------


@dataclass(frozen=True)
class HermiteCubic:
    """Cubic polynomial fixed by position and velocity at both ends."""


@dataclass(frozen=True)
class CircularArc:
    """Constant-speed motion on a circle about ``center`` in the plane normal to ``axis``.

    ``rate`` is the signed angular velocity about ``axis`` (right-hand rule).
    """

    center: tuple
    radius: float
    rate: float
    axis: tuple = (0.0, 0.0, 1.0)


@dataclass
class AgentRecipe:
    times: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    segments: list


@dataclass
class ReferenceRecipe:
    T: float
    agents: list


def _cubic_eval(p0, v0, p1, v1, dt, tau):
    d = p1 - p0
    a2 = (3.0 * d - dt * (2.0 * v0 + v1)) / dt ** 2
    a3 = (-2.0 * d + dt * (v0 + v1)) / dt ** 3
    tau = tau[:, None]
    q = p0 + v0 * tau + a2 * tau ** 2 + a3 * tau ** 3
    v = v0 + 2.0 * a2 * tau + 3.0 * a3 * tau ** 2
    a = 2.0 * a2 + 6.0 * a3 * tau
    j = np.broadcast_to(6.0 * a3, q.shape).copy()
    return q, v, a, j


def _arc_frame(arc: CircularArc, p0):
    c = np.asarray(arc.center, dtype=float)
    axis = np.asarray(arc.axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    u = (p0 - c) / arc.radius
    w = np.cross(axis, u)
    return c, u, w


def _arc_eval(arc: CircularArc, p0, tau):
    c, u, w = _arc_frame(arc, p0)
    r, om = arc.radius, arc.rate
    th = om * tau[:, None]
    cos, sin = np.cos(th), np.sin(th)
    q = c + r * (cos * u + sin * w)
    v = r * om * (-sin * u + cos * w)
    a = -r * om ** 2 * (cos * u + sin * w)
    j = r * om ** 3 * (sin * u - cos * w)
    return q, v, a, j


def _check_arc_start(arc: CircularArc, p0, v0, t0):
    c, u, w = _arc_frame(arc, p0)
    axis = np.asarray(arc.axis, dtype=float) / np.linalg.norm(arc.axis)
    off = p0 - c
    if abs(np.linalg.norm(off) - arc.radius) > JUNCTION_TOL or abs(off @ axis) > JUNCTION_TOL:
        raise RecipeError(f"discontinuous junction at t={t0:.6g}: point is not on the arc")
    if np.linalg.norm(arc.radius * arc.rate * w - v0) > JUNCTION_TOL:
        raise RecipeError(f"discontinuous junction at t={t0:.6g}: velocity does not match the arc")


def _segment_eval(seg, t0, t1, p0, v0, p1, v1, tau):
    if isinstance(seg, HermiteCubic):
        return _cubic_eval(p0, v0, p1, v1, t1 - t0, tau)
    return _arc_eval(seg, p0, tau)


def validate_recipe(recipe: ReferenceRecipe) -> None:
    """Check time ordering and C^1 continuity at every junction."""
    for a, ag in enumerate(recipe.agents):
        t = ag.times
        if len(ag.segments) != len(t) - 1:
            raise RecipeError(f"agent {a + 1}: {len(t)} waypoints need {len(t) - 1} segments")
        if abs(t[0]) > 0 or abs(t[-1] - recipe.T) > 1e-12 or np.any(np.diff(t) <= 0):
            raise RecipeError(f"agent {a + 1}: waypoint times must increase strictly from 0 to T")
        for m, seg in enumerate(ag.segments):
            if isinstance(seg, CircularArc):
                _check_arc_start(seg, ag.points[m], ag.velocities[m], t[m])
                q, v, _, _ = _arc_eval(seg, ag.points[m], np.array([t[m + 1] - t[m]]))
                if (np.linalg.norm(q[0] - ag.points[m + 1]) > JUNCTION_TOL
                        or np.linalg.norm(v[0] - ag.velocities[m + 1]) > JUNCTION_TOL):
                    raise RecipeError(f"discontinuous junction at t={t[m + 1]:.6g} (agent {a + 1})")


def build_reference(recipe: ReferenceRecipe, h: float, manifold: ManifoldId | None = None) -> Trajectory:
    """Sample a piecewise reference on the integration grid with analytic derivatives."""
    validate_recipe(recipe)
    steps = time_steps(recipe.T, h)
    t = _time_grid(steps, recipe.T)
    n = recipe.agents[0].points.shape[1]
    s = len(recipe.agents)
    out = [np.empty((len(t), s, n)) for _ in range(4)]
    for a, ag in enumerate(recipe.agents):
        # sample m belongs to the last segment whose start time is <= t_m
        idx = np.clip(np.searchsorted(ag.times, t, side="right") - 1, 0, len(ag.segments) - 1)
        for m, seg in enumerate(ag.segments):
            sel = idx == m
            if not np.any(sel):
                continue
            vals = _segment_eval(seg, ag.times[m], ag.times[m + 1], ag.points[m], ag.velocities[m],
                                 ag.points[m + 1], ag.velocities[m + 1], t[sel] - ag.times[m])
            for arr, val in zip(out, vals):
                arr[sel, a] = val
    manifold = manifold or ManifoldId.euclidean(n)
    return Trajectory(manifold, recipe.T, h, t, out[0], out[1], out[2], out[3])


# -- scenario ---------------------------------------------------------------


@dataclass
class CertificateSettings:
    convention: str = "half"
    V_minus: float | None = None  # None: 1 for the minimizer, V(d(0)) for the bounded certificate
    accel_bound: list | None = None
    V_star: float | None = None
    reference_check: str = "enforce"


@dataclass
class Scenario:
    name: str
    manifold: ManifoldId
    graph: InteractionGraph
    boundary: BoundaryConditions
    tolerances: dict
    method: str
    h: float
    solver: SolverOptions
    reference: ReferenceRecipe | None = None
    certificate: CertificateSettings = field(default_factory=CertificateSettings)
    xi0: np.ndarray | None = None
    document: dict = field(default_factory=dict)

    @property
    def T(self) -> float:
        return self.boundary.T

    @property
    def s(self) -> int:
        return self.boundary.s

    def initial_state(self):
        """Initial data with zero acceleration and jerk (the geodesic start)."""
        bc = self.boundary
        if not self.manifold.is_sphere:
            from .dynamics import EuclideanState
            z = np.zeros_like(bc.q0)
            return EuclideanState(bc.q0.copy(), bc.v0.copy(), z, z.copy())
        z = np.zeros((bc.s, 3))
        return SphereState(bc.R0.copy(), self.xi0.copy(), z, z.copy())

    def with_overrides(self, **kw) -> "Scenario":
        out = copy.copy(self)
        for key, val in kw.items():
            if val is not None:
                setattr(out, key, val)
        return out


class _Reader:
    """Typed accessors that report failures with the field path."""

    def __init__(self, path: str):
        self.path = path

    def fail(self, path, reason):
        raise ScenarioError(f"{path}: {reason}")

    def obj(self, value, path, allowed, required=()):
        if not isinstance(value, dict):
            self.fail(path, "expected an object")
        for key in value:
            if key not in allowed:
                self.fail(f"{path}.{key}" if path else key, "unknown key")
        for key in required:
            if key not in value:
                self.fail(f"{path}.{key}" if path else key, "missing required field")
        return value

    def num(self, value, path, positive=False, nonneg=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.fail(path, "expected a finite number")
        if positive and not value > 0:
            self.fail(path, "must be > 0")
        if nonneg and value < 0:
            self.fail(path, "must be >= 0")
        return float(value)

    def integer(self, value, path, minimum=None):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            self.fail(path, "expected an integer")
        if minimum is not None and value < minimum:
            self.fail(path, f"must be >= {minimum}")
        return int(value)

    def vec(self, value, path, n):
        if not isinstance(value, list) or len(value) != n:
            self.fail(path, f"expected a list of {n} numbers")
        return np.array([self.num(x, f"{path}[{c}]") for c, x in enumerate(value)])

    def mat3(self, value, path):
        if not isinstance(value, list) or len(value) != 3:
            self.fail(path, "expected a 3x3 row-major array")
        return np.array([self.vec(row, f"{path}[{r}]", 3) for r, row in enumerate(value)])


_TOP_KEYS = {"name", "manifold", "T", "agents", "terminal", "edges", "potential", "edge_potentials",
             "tolerances", "edge_tolerances", "integrator", "solver", "reference", "certificate"}
_POT_KEYS = {"family", "D", "eps", "k"}
_TOL_KEYS = {"r", "r_star", "R"}
_SOLVER_KEYS = {"tol", "ftol", "xtol", "max_evals", "restarts", "w_p", "w_v", "guess"}
_CERT_KEYS = {"convention", "V_minus", "accel_bound", "V_star", "reference_check"}


def _edge_label(e):
    return f"[{e[0] + 1},{e[1] + 1}]"


def _parse_potential(rd: _Reader, value, path) -> PotentialParams | None:
    if value is None:
        return None
    rd.obj(value, path, _POT_KEYS | {"edge"}, required=("family", "D", "eps", "k"))
    family = value["family"]
    if family not in ("inverse", "bump"):
        rd.fail(f"{path}.family", "must be 'inverse' or 'bump'")
    D = rd.num(value["D"], f"{path}.D")
    if not D > 0:
        rd.fail(f"{path}.D", "must be > 0")
    eps = rd.num(value["eps"], f"{path}.eps")
    if not eps > 0:
        raise ScenarioError(f"{path}.eps must be > 0")
    k = rd.integer(value["k"], f"{path}.k")
    if k < 2:
        rd.fail(f"{path}.k", "must be >= 2 (k = 1 is not differentiable at d = 0)")
    return PotentialParams(family, D, eps, k)


def _parse_edge(rd: _Reader, value, path, s):
    if not isinstance(value, list) or len(value) != 2:
        rd.fail(path, "expected [i, j]")
    i = rd.integer(value[0], f"{path}[0]", 1)
    j = rd.integer(value[1], f"{path}[1]", 1)
    if i > s or j > s:
        rd.fail(path, f"agent index out of range 1..{s}")
    if i == j:
        rd.fail(path, "self loop")
    return (min(i, j) - 1, max(i, j) - 1), (i - 1, j - 1)


def _parse_tolerance(rd: _Reader, value, path, edge) -> Tolerance:
    r = rd.num(value["r"], f"{path}.r", positive=True)
    rs = rd.num(value["r_star"], f"{path}.r_star", positive=True)
    R = rd.num(value["R"], f"{path}.R", positive=True)
    label = f"tolerances.edge{_edge_label(edge)}"
    if not r < rs:
        rd.fail(label, "r must be < r_star")
    if not rs < R:
        rd.fail(label, "r_star must be < R")
    return Tolerance(r, rs, R)


def _parse_agents(rd: _Reader, doc, manifold: ManifoldId, T: float):
    agents = doc["agents"]
    if not isinstance(agents, list) or len(agents) < 2:
        rd.fail("agents", "expected a list of at least 2 agents")
    n = manifold.ambient_dim
    s = len(agents)
    geodesic = doc.get("terminal") == "geodesic"
    if "terminal" in doc:
        if not manifold.is_sphere or doc["terminal"] != "geodesic":
            rd.fail("terminal", "only \"geodesic\" on s2 is supported")
    q0 = np.empty((s, n))
    v0 = np.empty((s, n))
    qT = np.empty((s, n))
    vT = np.empty((s, n))
    R0 = np.empty((s, 3, 3)) if manifold.is_sphere else None
    xi0 = np.empty((s, 3)) if manifold.is_sphere else None
    for a, ag in enumerate(agents):
        p = f"agents[{a}]"
        if manifold.is_sphere:
            allowed = {"R0", "xi0", "q0", "v0", "qT", "vT"}
            rd.obj(ag, p, allowed)
            if "R0" in ag:
                R = rd.mat3(ag["R0"], f"{p}.R0")
                if not is_rotation(R, ROTATION_INPUT_TOL):
                    rd.fail(f"{p}.R0", "not a rotation within 1e-6")
                R = reorthonormalize(R)
                if "xi0" not in ag:
                    rd.fail(f"{p}.xi0", "missing required field")
                xi = rd.vec(ag["xi0"], f"{p}.xi0", 3)
                if abs(xi[0]) > 1e-12:
                    rd.fail(f"{p}.xi0", "first component must be 0 (horizontal body velocity)")
                if "q0" in ag or "v0" in ag:
                    rd.fail(p, "give either R0/xi0 or q0/v0")
                q0[a] = R[:, 0]
                v0[a] = spatial_from_body(R, xi)
            else:
                for key in ("q0", "v0"):
                    if key not in ag:
                        rd.fail(f"{p}.{key}", "missing required field")
                q = rd.vec(ag["q0"], f"{p}.q0", 3)
                if abs(np.linalg.norm(q) - 1.0) > 1e-9:
                    rd.fail(f"{p}.q0", "not a unit vector")
                v = rd.vec(ag["v0"], f"{p}.v0", 3)
                if abs(v @ q) > 1e-9:
                    rd.fail(f"{p}.v0", "not tangent at q0")
                R = rotation_with_first_column(q)
                q0[a] = R[:, 0]
                v0[a] = v
                xi = np.array([0.0, -(R[:, 2] @ v), R[:, 1] @ v])
            R0[a] = R
            xi0[a] = xi
            if geodesic:
                if "qT" in ag or "vT" in ag:
                    rd.fail(p, "terminal data conflicts with \"terminal\": \"geodesic\"")
            else:
                for key in ("qT", "vT"):
                    if key not in ag:
                        rd.fail(f"{p}.{key}", "missing required field")
                qT[a] = rd.vec(ag["qT"], f"{p}.qT", 3)
                if abs(np.linalg.norm(qT[a]) - 1.0) > 1e-9:
                    rd.fail(f"{p}.qT", "not a unit vector")
                vT[a] = rd.vec(ag["vT"], f"{p}.vT", 3)
                if abs(vT[a] @ qT[a]) > 1e-9:
                    rd.fail(f"{p}.vT", "not tangent at qT")
        else:
            rd.obj(ag, p, {"q0", "v0", "qT", "vT"}, required=("q0", "v0", "qT", "vT"))
            q0[a] = rd.vec(ag["q0"], f"{p}.q0", n)
            v0[a] = rd.vec(ag["v0"], f"{p}.v0", n)
            qT[a] = rd.vec(ag["qT"], f"{p}.qT", n)
            vT[a] = rd.vec(ag["vT"], f"{p}.vT", n)
    return q0, v0, qT, vT, R0, xi0, geodesic


def _parse_reference(rd: _Reader, value, manifold, T, q0, v0, qT, vT) -> ReferenceRecipe:
    if manifold.is_sphere:
        rd.fail("reference", "reference recipes are supported on Euclidean scenarios only")
    rd.obj(value, "reference", {"agents"}, required=("agents",))
    agents = value["agents"]
    s, n = q0.shape
    if not isinstance(agents, list) or len(agents) != s:
        rd.fail("reference.agents", f"expected {s} agent recipes")
    out = []
    for a, ag in enumerate(agents):
        p = f"reference.agents[{a}]"
        rd.obj(ag, p, {"waypoints", "segments"}, required=("segments",))
        times, pts, vels = [0.0], [q0[a]], [v0[a]]
        for m, wp in enumerate(ag.get("waypoints", [])):
            wpp = f"{p}.waypoints[{m}]"
            rd.obj(wp, wpp, {"t", "q", "v"}, required=("t", "q", "v"))
            times.append(rd.num(wp["t"], f"{wpp}.t"))
            pts.append(rd.vec(wp["q"], f"{wpp}.q", n))
            vels.append(rd.vec(wp["v"], f"{wpp}.v", n))
        times.append(T)
        pts.append(qT[a])
        vels.append(vT[a])
        segs = []
        if not isinstance(ag["segments"], list):
            rd.fail(f"{p}.segments", "expected a list")
        for m, sg in enumerate(ag["segments"]):
            sp = f"{p}.segments[{m}]"
            rd.obj(sg, sp, {"kind", "center", "radius", "rate", "axis"}, required=("kind",))
            if sg["kind"] == "cubic":
                if len(sg) > 1:
                    rd.fail(sp, "a cubic segment takes no parameters")
                segs.append(HermiteCubic())
            elif sg["kind"] == "arc":
                if n != 3 and n != 2:
                    rd.fail(sp, "arcs need a 2- or 3-dimensional space")
                for key in ("center", "radius", "rate"):
                    if key not in sg:
                        rd.fail(f"{sp}.{key}", "missing required field")
                center = rd.vec(sg["center"], f"{sp}.center", n)
                radius = rd.num(sg["radius"], f"{sp}.radius", positive=True)
                rate = rd.num(sg["rate"], f"{sp}.rate")
                axis = rd.vec(sg.get("axis", [0.0, 0.0, 1.0]), f"{sp}.axis", 3)
                if n == 2:
                    center = np.append(center, 0.0)
                if not np.linalg.norm(axis) > 0:
                    rd.fail(f"{sp}.axis", "must be nonzero")
                segs.append(CircularArc(tuple(center[:n]) if n == 3 else tuple(center[:2]), radius, rate,
                                        tuple(axis)))
            else:
                rd.fail(f"{sp}.kind", "must be 'cubic' or 'arc'")
        if n == 2 and any(isinstance(sg, CircularArc) for sg in segs):
            rd.fail(p, "arcs are supported in R^3 only")
        out.append(AgentRecipe(np.array(times), np.array(pts), np.array(vels), segs))
    recipe = ReferenceRecipe(T, out)
    try:
        validate_recipe(recipe)
    except RecipeError as exc:
        rd.fail("reference", str(exc))
    return recipe


def _geodesic_endpoints(graph: InteractionGraph, R0, xi0, h, T, method):
    z = np.zeros_like(xi0)
    traj = integrate(graph.without_potential(), SphereState(R0, xi0, z, z.copy()), h, T, method)
    return traj.positions[-1].copy(), traj.velocities[-1].copy()


def scenario_from_dict(doc: dict) -> Scenario:
    rd = _Reader("")
    rd.obj(doc, "", _TOP_KEYS, required=("manifold", "T", "agents", "edges", "tolerances", "integrator"))
    name = doc.get("name", "")
    if not isinstance(name, str):
        rd.fail("name", "expected a string")
    try:
        manifold = ManifoldId.parse(doc["manifold"]) if isinstance(doc["manifold"], str) else None
    except ValueError:
        manifold = None
    if manifold is None:
        rd.fail("manifold", "must be \"s2\" or \"rN\" (N >= 1)")
    T = rd.num(doc["T"], "T", positive=True)

    integ = rd.obj(doc["integrator"], "integrator", {"method", "h"}, required=("method", "h"))
    method = integ["method"]
    if method not in METHODS:
        rd.fail("integrator.method", "must be 'euler' or 'rk4'")
    h = rd.num(integ["h"], "integrator.h", positive=True)
    if abs(T / h - round(T / h)) > 0.5 or h > T:
        rd.fail("integrator.h", "T/h must be within 0.5 of an integer")

    q0, v0, qT, vT, R0, xi0, geodesic = _parse_agents(rd, doc, manifold, T)
    s = q0.shape[0]

    if not isinstance(doc["edges"], list):
        rd.fail("edges", "expected a list of [i, j] pairs")
    edges = []
    for m, e in enumerate(doc["edges"]):
        key, _ = _parse_edge(rd, e, f"edges[{m}]", s)
        if key in edges:
            rd.fail(f"edges[{m}]", "duplicate edge")
        edges.append(key)

    base = _parse_potential(rd, doc.get("potential"), "potential")
    params = {e: base for e in edges}
    raw = {}
    for m, ep in enumerate(doc.get("edge_potentials", []) or []):
        p = f"edge_potentials[{m}]"
        rd.obj(ep, p, _POT_KEYS | {"edge"}, required=("edge",))
        key, directed = _parse_edge(rd, ep["edge"], f"{p}.edge", s)
        if key not in params:
            rd.fail(f"{p}.edge", "not an edge of the graph")
        pp = _parse_potential(rd, {k: v for k, v in ep.items() if k != "edge"}, p)
        if directed in raw:
            rd.fail(f"{p}.edge", "duplicate entry")
        raw[directed] = pp
        params[key] = pp
    graph = InteractionGraph(s, edges, params)
    if raw:
        dummy_p = np.zeros(manifold.ambient_dim)
        dummy_q = np.zeros(manifold.ambient_dim)
        if manifold.is_sphere:
            dummy_p[0] = 1.0
            dummy_q[1] = 1.0
        else:
            dummy_q[0] = 1.0
        full = {}
        for i, j in edges:
            fwd, rev = raw.get((i, j)), raw.get((j, i))
            full[(i, j)] = fwd if fwd is not None else (rev if rev is not None else params[(i, j)])
            full[(j, i)] = rev if rev is not None else full[(i, j)]
        if not pair_potential_symmetry_check(graph, manifold, dummy_p, dummy_q, full):
            rd.fail("edge_potentials", "per-edge parameters differ between (i, j) and (j, i)")

    tol_doc = rd.obj(doc["tolerances"], "tolerances", _TOL_KEYS, required=tuple(_TOL_KEYS))
    tolerances = {}
    for e in edges:
        tolerances[e] = _parse_tolerance(rd, tol_doc, "tolerances", e)
    for m, et in enumerate(doc.get("edge_tolerances", []) or []):
        p = f"edge_tolerances[{m}]"
        rd.obj(et, p, _TOL_KEYS | {"edge"}, required=("edge",) + tuple(sorted(_TOL_KEYS)))
        key, _ = _parse_edge(rd, et["edge"], f"{p}.edge", s)
        if key not in tolerances:
            rd.fail(f"{p}.edge", "not an edge of the graph")
        tolerances[key] = _parse_tolerance(rd, et, p, key)

    sol_doc = rd.obj(doc.get("solver", {}), "solver", _SOLVER_KEYS)
    solver = SolverOptions()
    for key in ("tol", "ftol", "xtol", "w_p", "w_v"):
        if key in sol_doc:
            setattr(solver, key, rd.num(sol_doc[key], f"solver.{key}", positive=True))
    if "max_evals" in sol_doc:
        solver.max_evals = rd.integer(sol_doc["max_evals"], "solver.max_evals", 1)
    if "restarts" in sol_doc:
        solver.restarts = rd.integer(sol_doc["restarts"], "solver.restarts", 0)
    if "guess" in sol_doc:
        g = sol_doc["guess"]
        if isinstance(g, str):
            if g not in ("zero", "cubic-init"):
                rd.fail("solver.guess", "must be \"zero\", \"cubic-init\" or a list of numbers")
            solver.guess = g
        else:
            dof = 2 if manifold.is_sphere else manifold.n
            solver.guess = rd.vec(g, "solver.guess", s * 2 * dof)

    if geodesic:
        qT, vT = _geodesic_endpoints(graph, R0, xi0, h, T, method)
    boundary = BoundaryConditions(manifold, T, q0, v0, qT, vT, R0=R0)

    reference = None
    if doc.get("reference") is not None:
        reference = _parse_reference(rd, doc["reference"], manifold, T, q0, v0, qT, vT)

    cert = CertificateSettings()
    if doc.get("certificate") is not None:
        cd = rd.obj(doc["certificate"], "certificate", _CERT_KEYS)
        if "convention" in cd:
            if cd["convention"] not in CONVENTIONS:
                rd.fail("certificate.convention", "must be 'strict' or 'half'")
            cert.convention = cd["convention"]
        if "V_minus" in cd:
            cert.V_minus = rd.num(cd["V_minus"], "certificate.V_minus", nonneg=True)
        if "V_star" in cd:
            cert.V_star = rd.num(cd["V_star"], "certificate.V_star", nonneg=True)
        if "reference_check" in cd:
            if cd["reference_check"] not in ("enforce", "warn"):
                rd.fail("certificate.reference_check", "must be 'enforce' or 'warn'")
            cert.reference_check = cd["reference_check"]
        if "accel_bound" in cd:
            ab = cd["accel_bound"]
            if isinstance(ab, list):
                cert.accel_bound = list(rd.vec(ab, "certificate.accel_bound", s))
            else:
                cert.accel_bound = [rd.num(ab, "certificate.accel_bound", nonneg=True)] * s

    return Scenario(name, manifold, graph, boundary, tolerances, method, h, solver, reference, cert,
                    xi0, copy.deepcopy(doc))


def parse_scenario(text: str) -> Scenario:
    """Parse and validate a scenario document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"JSON syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(doc)


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def bundled_path(name: str):
    """Path of a scenario shipped with the package (``bench_r3`` or ``bench_s2``)."""
    from importlib.resources import files

    return files("manifold_avoidance") / "data" / f"{name}.json"


def load_bundled(name: str) -> Scenario:
    return parse_scenario(bundled_path(name).read_text(encoding="utf-8"))


def tuned_document(scenario: Scenario, params: dict) -> dict:
    """Copy of the scenario document with per-edge potentials replaced."""
    doc = copy.deepcopy(scenario.document)
    doc.pop("potential", None)
    doc["edge_potentials"] = [
        {"edge": [i + 1, j + 1], "family": p.family, "D": p.D, "eps": p.eps, "k": p.k}
        for (i, j), p in sorted(params.items())
    ]
    return doc


# -- output ------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trajectory_columns(manifold: ManifoldId, s: int, edges) -> list:
    n = manifold.ambient_dim
    pos = "u" if manifold.is_sphere else "x"
    cols = ["t"]
    for a in range(s):
        cols += [f"{pos}{a + 1}_{c + 1}" for c in range(n)]
        cols += [f"v{a + 1}_{c + 1}" for c in range(n)]
    cols += [f"d{i + 1}_{j + 1}" for i, j in edges]
    return cols


def write_trajectory(traj: Trajectory, edges=()) -> str:
    """CSV with t, per-agent position and velocity components and per-edge distances."""
    edges = list(edges)
    cols = trajectory_columns(traj.manifold, traj.s, edges)
    dists = [traj.pair_distances(i, j) for i, j in edges]
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for m in range(len(traj)):
        row = [_fmt(traj.t[m])]
        for a in range(traj.s):
            row += [_fmt(x) for x in traj.positions[m, a]]
            row += [_fmt(x) for x in traj.velocities[m, a]]
        row += [_fmt(d[m]) for d in dists]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def read_trajectory(text: str):
    """Inverse of :func:`write_trajectory`; returns ``(trajectory, edges)``."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty trajectory file")
    cols = lines[0].split(",")
    if cols[0] != "t":
        raise ValueError("first column must be 't'")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]]).reshape(len(lines) - 1, len(cols))
    pos_cols = [c for c in cols if c[0] in "xu" and "_" in c]
    sphere = bool(pos_cols) and pos_cols[0][0] == "u"
    agents = sorted({int(c[1:].split("_")[0]) for c in pos_cols})
    s = len(agents)
    n = len(pos_cols) // s if s else 0
    manifold = ManifoldId.sphere() if sphere else ManifoldId.euclidean(n)
    positions = np.empty((len(data), s, n))
    velocities = np.empty((len(data), s, n))
    index = {c: k for k, c in enumerate(cols)}
    p = "u" if sphere else "x"
    for a in range(s):
        for c in range(n):
            positions[:, a, c] = data[:, index[f"{p}{a + 1}_{c + 1}"]]
            velocities[:, a, c] = data[:, index[f"v{a + 1}_{c + 1}"]]
    edges = []
    for c in cols:
        if c.startswith("d"):
            i, j = c[1:].split("_")
            edges.append((int(i) - 1, int(j) - 1))
    t = data[:, 0]
    h = float(t[1] - t[0]) if len(t) > 1 else 0.0
    return Trajectory(manifold, float(t[-1]), h, t, positions, velocities), edges


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def to_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_certificate(cert, extra: dict | None = None) -> str:
    """Certificate JSON: kind, pass flag, per-edge thresholds and margins, constants."""
    body = cert.as_dict()
    if extra:
        body.update(extra)
    return to_json(body)
