"""Command-line interface: solve, certify, tune, check and reproduce.

Exit codes: 0 success, 1 input error, 2 solver did not converge, 3 a check or
certificate failed. Diagnostics go to stderr, the summary JSON to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from .bvp import SolverOptions, solve_bvp
from .dynamics import integrate, hamiltonian_series
from .potentials import eval_potential
from .safety import (
    InfeasibleError,
    ReferenceError_,
    Tolerance,
    certify_bounded,
    certify_minimizer,
    check_avoidance,
    measure_bounds,
    radius_limit,
    reference_constants,
    risk_potential_bound,
    tune_potential,
)
from .scenario import (
    Scenario,
    ScenarioError,
    build_reference,
    load_bundled,
    load_scenario,
    read_trajectory,
    to_json,
    tuned_document,
    write_certificate,
    write_trajectory,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOCONV = 2
EXIT_FAILED = 3

log = logging.getLogger("manifold_avoidance")


class InputError(Exception):
    pass


# -- helpers -----------------------------------------------------------------


def _overrides(args) -> dict:
    keys = ("h", "method", "convention", "bounded", "r", "max_evals", "vstar", "reference", "unknowns")
    out = {}
    for k in keys:
        val = getattr(args, k, None)
        if val not in (None, False):
            out[k] = val
    return out


def _load(path) -> Scenario:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"scenario file not found: {p}")
    try:
        return load_scenario(p)
    except ScenarioError as exc:
        raise InputError(f"{p}: {exc}") from None


def _apply(sc: Scenario, args) -> Scenario:
    """Scenario with command-line overrides of integrator and solver settings."""
    kw = {}
    if getattr(args, "h", None) is not None:
        if not args.h > 0:
            raise InputError("--h must be > 0")
        kw["h"] = float(args.h)
    if getattr(args, "method", None) is not None:
        kw["method"] = args.method
    if getattr(args, "max_evals", None) is not None:
        if args.max_evals < 1:
            raise InputError("--max-evals must be >= 1")
        solver = SolverOptions(**vars(sc.solver))
        solver.max_evals = int(args.max_evals)
        kw["solver"] = solver
    return sc.with_overrides(**kw)


def _out_dir(args, default: str) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(summary: dict) -> None:
    sys.stdout.write(to_json(summary))
    sys.stdout.flush()


def _avoidance_rows(results) -> list:
    return [{"edge": [e.edge[0] + 1, e.edge[1] + 1], "min_distance": e.min_distance, "t_min": e.t_min,
             "r": e.r, "avoided": e.avoided} for e in results]


def _finite_difference_accel(traj):
    """Acceleration from sampled velocities (second-order differences)."""
    traj.accel = np.gradient(traj.velocities, traj.t, axis=0, edge_order=2)
    return traj


def _vstar_minimizer(sc: Scenario, vstar) -> dict:
    if vstar is not None:
        return {e: float(vstar) for e in sc.tolerances}
    if sc.certificate.V_star is not None:
        return {e: sc.certificate.V_star for e in sc.tolerances}
    out = {}
    for e, tol in sc.tolerances.items():
        params = sc.graph.params.get(e)
        if params is None:
            raise InputError(f"edge [{e[0] + 1},{e[1] + 1}] has no potential; give --vstar")
        out[e] = risk_potential_bound(params, tol)
    return out


def _vminus_minimizer(sc: Scenario):
    return 1.0 if sc.certificate.V_minus is None else sc.certificate.V_minus


def _vminus_bounded(sc: Scenario) -> dict:
    """Potential at the initial distances unless the scenario fixes V-."""
    if sc.certificate.V_minus is not None:
        return {e: sc.certificate.V_minus for e in sc.graph.edges}
    from .geometry import dist

    q0 = sc.boundary.q0
    return {e: eval_potential(sc.graph.params.get(e), dist(sc.manifold, q0[e[0]], q0[e[1]]))
            for e in sc.graph.edges}


def minimizer_certificate(sc: Scenario, convention: str | None = None, reference=None, vstar=None,
                          measured: bool = False):
    """Reference constants and minimizer certificate for a scenario.

    ``measured`` ignores a configured acceleration bound and uses the grid
    maxima of the reference.
    """
    conv = convention or sc.certificate.convention
    if reference is None:
        if sc.reference is None:
            raise InputError("scenario has no reference recipe; pass --reference trajectory.csv")
        ref = build_reference(sc.reference, sc.h, sc.manifold)
    else:
        ref = reference
    accel = None if measured else sc.certificate.accel_bound
    enforce = sc.certificate.reference_check == "enforce"
    consts = reference_constants(ref, sc.graph, sc.tolerances, _vminus_minimizer(sc), conv, accel, enforce)
    cert = certify_minimizer(consts, sc.tolerances, _vstar_minimizer(sc, vstar))
    cert.details["accel_source"] = "measured" if accel is None else "scenario bound"
    return consts, cert


def bounded_certificate(sc: Scenario, traj, r: float | None = None, vstar=None):
    """Bounded-derivative certificate with V* = V(r) and the certified radius limit."""
    bounds = measure_bounds(traj)
    vminus = _vminus_bounded(sc)
    radius = {}
    vs = {}
    for e in sc.graph.edges:
        params = sc.graph.params.get(e)
        rr = sc.tolerances[e].r if r is None else float(r)
        radius[e] = rr
        if vstar is not None:
            vs[e] = float(vstar)
        else:
            if params is None:
                raise InputError(f"edge [{e[0] + 1},{e[1] + 1}] has no potential; give --vstar")
            vs[e] = eval_potential(params, rr)
    cert = certify_bounded(bounds, sc.graph, vminus, vs)
    total = cert.details["sum"]
    cert.details["r"] = {f"{i + 1}-{j + 1}": v for (i, j), v in sorted(radius.items())}
    limits = {}
    for e in sc.graph.edges:
        params = sc.graph.params.get(e)
        if params is not None:
            limits[f"{e[0] + 1}-{e[1] + 1}"] = radius_limit(params, total)
    cert.details["radius_limit"] = limits
    return cert


def _solve(sc: Scenario, label: str):
    t0 = time.perf_counter()
    rep = solve_bvp(sc)
    log.info("%s: residual %.3e after %d evaluations (%s, %.1f s)", label, rep.residual, rep.function_evals,
             rep.reason, time.perf_counter() - t0)
    return rep


def _reshoot(sc: Scenario, path):
    from .bvp import shoot

    p = Path(path)
    if not p.is_file():
        raise InputError(f"solve report not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
        u = np.asarray(doc["solver"]["unknowns"] if "solver" in doc else doc["unknowns"], dtype=float)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{p}: cannot read unknowns ({exc})") from None
    if u.size != sc.boundary.n_unknowns:
        raise InputError(f"{p}: expected {sc.boundary.n_unknowns} unknowns, found {u.size}")
    return shoot(sc, u)


# -- verbs -------------------------------------------------------------------


def cmd_solve(args) -> int:
    sc = _apply(_load(args.scenario), args)
    out = _out_dir(args, ".")
    rep = _solve(sc, "solve")
    edges = sc.graph.edges
    (out / "trajectory.csv").write_text(write_trajectory(rep.trajectory, edges), encoding="utf-8")
    report = {
        "scenario": sc.name,
        "manifold": sc.manifold.tag,
        "method": sc.method,
        "h": sc.h,
        "overrides": _overrides(args),
        "solver": rep.summary(),
        "avoidance": _avoidance_rows(check_avoidance(rep.trajectory, sc.tolerances, edges)),
    }
    (out / "solve_report.json").write_text(to_json(report), encoding="utf-8")
    _emit({k: report[k] for k in ("scenario", "overrides", "avoidance")} | {
        "converged": rep.converged, "residual": rep.residual, "function_evals": rep.function_evals})
    if not rep.converged:
        log.error("solver did not converge (residual %.3e > tol %.1e)", rep.residual, sc.solver.tol)
        return EXIT_NOCONV
    return EXIT_OK


def cmd_certify(args) -> int:
    sc = _apply(_load(args.scenario), args)
    out = _out_dir(args, ".")
    extra = {"scenario": sc.name, "overrides": _overrides(args)}
    if args.bounded:
        if args.unknowns:
            traj = _reshoot(sc, args.unknowns)
        else:
            rep = _solve(sc, "solve")
            if not rep.converged:
                log.error("solver did not converge; the bounded certificate needs a critical point")
                return EXIT_NOCONV
            traj = rep.trajectory
        cert = bounded_certificate(sc, traj, args.r, args.vstar)
    else:
        reference = None
        if args.reference:
            p = Path(args.reference)
            if not p.is_file():
                raise InputError(f"reference trajectory not found: {p}")
            reference, _ = read_trajectory(p.read_text(encoding="utf-8"))
            _finite_difference_accel(reference)
        try:
            _, cert = minimizer_certificate(sc, args.convention, reference, args.vstar)
        except ReferenceError_ as exc:
            raise InputError(str(exc)) from None
        viol = cert.details["constants"]["reference_violations"]
        if viol:
            log.warning("reference enters the safety region on %d edge(s); certificate hypothesis not met",
                        len(viol))
    text = write_certificate(cert, extra)
    (out / "certificate.json").write_text(text, encoding="utf-8")
    _emit(json.loads(text))
    if not cert.passed:
        for (i, j), m in sorted(cert.margins.items()):
            if m <= 0:
                log.error("edge [%d,%d]: margin %.6g", i + 1, j + 1, m)
        return EXIT_FAILED
    return EXIT_OK


def cmd_tune(args) -> int:
    sc = _apply(_load(args.scenario), args)
    out = _out_dir(args, ".")
    if args.r is not None:
        tolerances = {}
        for e, tol in sc.tolerances.items():
            if not 0 < args.r < tol.r_star:
                raise InfeasibleError(
                    f"edge [{e[0] + 1},{e[1] + 1}]: r={args.r} must satisfy 0 < r < r_star={tol.r_star} < R={tol.R}")
            tolerances[e] = Tolerance(float(args.r), tol.r_star, tol.R)
        sc = sc.with_overrides(tolerances=tolerances)
    if sc.reference is None:
        raise InputError("tune needs a reference recipe in the scenario")
    ref = build_reference(sc.reference, sc.h, sc.manifold)
    enforce = sc.certificate.reference_check == "enforce"
    try:
        consts = reference_constants(ref, sc.graph, sc.tolerances, 1.0, args.convention or sc.certificate.convention,
                                     sc.certificate.accel_bound, enforce)
    except ReferenceError_ as exc:
        raise InputError(str(exc)) from None
    params = tune_potential(sc.tolerances, consts)
    doc = tuned_document(sc, params)
    if args.r is not None:
        doc["edge_tolerances"] = [{"edge": [i + 1, j + 1], "r": t.r, "r_star": t.r_star, "R": t.R}
                                  for (i, j), t in sorted(sc.tolerances.items())]
    (out / "tuned_scenario.json").write_text(to_json(doc), encoding="utf-8")
    _emit({"scenario": sc.name, "overrides": _overrides(args), "constants": consts.as_dict(),
           "edge_potentials": doc["edge_potentials"]})
    return EXIT_OK


def cmd_check(args) -> int:
    p = Path(args.trajectory)
    if not p.is_file():
        raise InputError(f"trajectory file not found: {p}")
    try:
        traj, edges = read_trajectory(p.read_text(encoding="utf-8"))
    except (ValueError, KeyError, IndexError) as exc:
        raise InputError(f"{p}: {exc}") from None
    if args.scenario:
        sc = _load(args.scenario)
        tolerances = {e: t.r for e, t in sc.tolerances.items()}
        if args.r is not None:
            tolerances = {e: float(args.r) for e in tolerances}
        edges = sorted(tolerances)
    elif args.r is not None:
        tolerances = {e: float(args.r) for e in edges}
    else:
        raise InputError("check needs --r or --scenario for the collision radius")
    if args.r is not None and args.r < 0:
        raise InputError("--r must be >= 0")
    rows = check_avoidance(traj, tolerances, edges)
    _emit({"trajectory": str(p), "overrides": _overrides(args), "avoidance": _avoidance_rows(rows)})
    if all(r.avoided for r in rows):
        return EXIT_OK
    for r in rows:
        if not r.avoided:
            log.error("edge [%d,%d]: min distance %.6g < r=%.6g at t=%.6g", r.edge[0] + 1, r.edge[1] + 1,
                      r.min_distance, r.r, r.t_min)
    return EXIT_FAILED


# -- reproduce ---------------------------------------------------------------


def _fact(name, expected, measured, ok) -> dict:
    return {"fact": name, "expected": expected, "measured": measured, "pass": bool(ok)}


def _min_edge(traj, edges):
    best = (math.inf, 0.0, None)
    for e in edges:
        d = traj.pair_distances(*e)
        m = int(np.argmin(d))
        if d[m] < best[0]:
            best = (float(d[m]), float(traj.t[m]), e)
    return best


def _gnuplot(which: str, files: list, s: int, sphere: bool) -> str:
    lines = ["set datafile separator ','", "set key autotitle columnhead", f"set title '{which}'"]
    px = "u" if sphere else "x"
    for k, f in enumerate(files):
        lines.append(f"# {f}")
        cmd = "splot" if sphere else "plot"
        parts = []
        for a in range(1, s + 1):
            cols = f"(column('{px}{a}_1')):(column('{px}{a}_2'))"
            if sphere:
                cols += f":(column('{px}{a}_3'))"
            parts.append(f"'{f}' using {cols} with lines title 'agent {a}'")
        lines.append(f"{cmd} " + ", \\\n     ".join(parts))
        if k < len(files) - 1:
            lines.append("pause -1")
    return "\n".join(lines) + "\n"


def _table(facts: list) -> str:
    rows = ["| fact | expected | measured | status |", "|---|---|---|---|"]
    for f in facts:
        rows.append(f"| {f['fact']} | {f['expected']} | {f['measured']} | {'PASS' if f['pass'] else 'FAIL'} |")
    return "\n".join(rows) + "\n"


def reproduce_r3(sc: Scenario, out: Path) -> dict:
    edges = sc.graph.edges
    base = _solve(sc.with_overrides(graph=sc.graph.without_potential()), "baseline (V = 0)")
    sol = _solve(sc, "potential")
    (out / "baseline.csv").write_text(write_trajectory(base.trajectory, edges), encoding="utf-8")
    (out / "trajectory.csv").write_text(write_trajectory(sol.trajectory, edges), encoding="utf-8")

    dmin, tmin, emin = _min_edge(base.trajectory, edges)
    facts = [_fact("(a) baseline min edge distance near t = 2", "< 0.05 with t in [1.9, 2.1]",
                   f"{dmin:.4g} at t={tmin:.3f} (converged={base.converged})",
                   base.converged and dmin < 0.05 and 1.9 <= tmin <= 2.1)]
    avoid = check_avoidance(sol.trajectory, sc.tolerances, edges)
    worst = min(a.min_distance for a in avoid)
    facts.append(_fact("(b) potential min edge distance", "> 0.5 on every edge (converged)",
                       f"{worst:.4g} (converged={sol.converged}, residual={sol.residual:.3e})",
                       sol.converged and all(a.min_distance > 0.5 for a in avoid)))

    consts, cert = minimizer_certificate(sc)
    thr = max(cert.thresholds.values())
    vstar = min(cert.vstar.values())
    facts.append(_fact("(c) minimizer certificate", "threshold ~ 20290 (1%), V(r*) ~ 65527 (0.1%), pass",
                       f"threshold {thr:.1f}, V(r*) {vstar:.1f}, pass={cert.passed}",
                       abs(thr - 20290) <= 0.01 * 20290 and abs(vstar - 65527) <= 1e-3 * 65527
                       and cert.passed))
    closed = 1.0 / (1e-5 + 2.0 ** -16)
    info = [_fact("V(r*) against 1/(eps + (r*/D)^k) evaluated directly", f"{closed:.2f}",
                  f"{vstar:.2f}", abs(vstar - closed) <= 1e-9 * closed)]
    (out / "certificate.json").write_text(write_certificate(cert, {"scenario": sc.name}), encoding="utf-8")

    consts_m, cert_m = minimizer_certificate(sc, measured=True)
    (out / "certificate_measured.json").write_text(write_certificate(cert_m, {"scenario": sc.name}),
                                                   encoding="utf-8")
    info += [
        _fact("reference stays in the safety region (d >= R)", "no violations",
              f"{len(consts.violations)} edge(s) violate, min distance "
              f"{min((v[2] for v in consts.violations), default=float('nan')):.4g}",
              not consts.violations),
        _fact("certificate with measured reference acceleration", "informational",
              f"a_max {max(consts_m.a):.4g}, c {consts_m.c:.1f}, threshold {max(cert_m.thresholds.values()):.1f}, "
              f"pass={cert_m.passed}", cert_m.passed),
    ]
    (out / "plot.gp").write_text(_gnuplot("R^3", ["baseline.csv", "trajectory.csv"], sc.s, False),
                                 encoding="utf-8")
    return {"facts": facts, "informational": info,
            "solves": {"baseline": base.summary(), "potential": sol.summary()}}


def reproduce_s2(sc: Scenario, out: Path, r: float | None = None) -> dict:
    edges = sc.graph.edges
    free = sc.graph.without_potential()
    geo = integrate(free, sc.initial_state(), sc.h, sc.T, sc.method)
    sol = _solve(sc, "potential")
    pairs = [(i, j) for i in range(sc.s) for j in range(i + 1, sc.s)]
    (out / "geodesic.csv").write_text(write_trajectory(geo, pairs), encoding="utf-8")
    (out / "trajectory.csv").write_text(write_trajectory(sol.trajectory, pairs), encoding="utf-8")

    radius = min(t.r for t in sc.tolerances.values())
    worst = np.max([geo.pair_distances(*p) for p in pairs], axis=0)
    inside = worst < radius
    window = (geo.t >= 2.8 - 1e-12) & (geo.t <= 3.1 + 1e-12)
    if inside.any():
        first = int(np.argmax(inside))
        last = first + int(np.argmin(inside[first:])) - 1 if not inside[first:].all() else len(inside) - 1
        span = f"all pairs within r on [{geo.t[first]:.3f}, {geo.t[last]:.3f}]"
    else:
        span = "never all within r"
    facts = [_fact("(a) geodesics: all pairs within r", "at some t in [2.8, 3.1]", span,
                   bool(np.any(inside & window)))]
    avoid = check_avoidance(sol.trajectory, sc.tolerances, edges)
    dmin = min(a.min_distance for a in avoid)
    facts.append(_fact("(b) solved min edge distance", "> 0.401 (converged)",
                       f"{dmin:.4g} (converged={sol.converged}, residual={sol.residual:.3e})",
                       sol.converged and dmin > 0.401))
    cert = bounded_certificate(sc, sol.trajectory, r)
    total = cert.details["sum"]
    limit = min(cert.details["radius_limit"].values())
    facts.append(_fact("(c) bounded-derivative certificate", "sum < 10.32, radius limit ~ 0.373 (0.002)",
                       f"sum {total:.4g}, radius limit {limit:.4g}",
                       total < 10.32 and abs(limit - 0.373) <= 0.002))
    (out / "certificate.json").write_text(write_certificate(cert, {"scenario": sc.name}), encoding="utf-8")
    H = hamiltonian_series(sol.trajectory, sc.graph)
    info = [_fact("Hamiltonian drift along the solution", "informational",
                  f"{float(np.max(np.abs(H - H[0])) / max(1.0, abs(H[0]))):.3e}", True)]
    (out / "plot.gp").write_text(_gnuplot("S^2", ["geodesic.csv", "trajectory.csv"], sc.s, True),
                                 encoding="utf-8")
    return {"facts": facts, "informational": info, "solves": {"potential": sol.summary()}}


def cmd_reproduce(args) -> int:
    which = args.which
    out = _out_dir(args, f"reproduce_{which}")
    sc = _apply(load_bundled(f"bench_{which}"), args)
    t0 = time.perf_counter()
    result = reproduce_r3(sc, out) if which == "r3" else reproduce_s2(sc, out, args.r)
    log.info("reproduce %s finished in %.1f s", which, time.perf_counter() - t0)
    ok = all(f["pass"] for f in result["facts"])
    summary = {"scenario": sc.name, "overrides": _overrides(args), "all_facts_hold": ok, **result}
    (out / "summary.json").write_text(to_json(summary), encoding="utf-8")
    (out / "summary.md").write_text(_table(result["facts"] + result["informational"]), encoding="utf-8")
    for f in result["facts"]:
        log.info("%s %s: %s", "PASS" if f["pass"] else "FAIL", f["fact"], f["measured"])
    _emit({k: summary[k] for k in ("scenario", "overrides", "all_facts_hold", "facts", "informational")})
    return EXIT_OK if ok else EXIT_FAILED


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="manifold-avoidance", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug diagnostics on stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("scenario", help="scenario JSON file")
        sp.add_argument("--h", type=float, help="integration step")
        sp.add_argument("--method", choices=("euler", "rk4"))
        sp.add_argument("--max-evals", type=int, dest="max_evals", help="solver evaluation budget")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("solve", help="solve the boundary value problem")
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("certify", help="evaluate a safety certificate")
    common(sp)
    sp.add_argument("--convention", choices=("strict", "half"))
    sp.add_argument("--bounded", action="store_true", help="bounded-derivative certificate on the solution")
    sp.add_argument("--r", type=float, help="collision radius for the bounded certificate")
    sp.add_argument("--vstar", type=float, help="override V* on every edge")
    sp.add_argument("--reference", help="reference trajectory CSV instead of the scenario recipe")
    sp.add_argument("--unknowns", help="solve_report.json whose unknowns define the solution")
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("tune", help="choose potential parameters that pass the minimizer certificate")
    common(sp)
    sp.add_argument("--convention", choices=("strict", "half"))
    sp.add_argument("--r", type=float, help="override the collision radius on every edge")
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("check", help="check a trajectory CSV for collisions")
    sp.add_argument("trajectory", help="trajectory CSV")
    sp.add_argument("--r", type=float, help="collision radius for every edge")
    sp.add_argument("--scenario", help="take edges and radii from a scenario")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("reproduce", help="run the bundled reference experiments")
    sp.add_argument("which", choices=("r3", "s2"))
    common(sp, scenario=False)
    sp.add_argument("--r", type=float, help="collision radius for the bounded certificate (s2)")
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    # own handler bound to the current stderr so repeated in-process calls behave
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    saved = (log.level, log.propagate)
    log.addHandler(handler)
    log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    log.propagate = False
    try:
        return args.func(args)
    except (InputError, ScenarioError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except InfeasibleError as exc:
        log.error("infeasible: %s", exc)
        return EXIT_FAILED
    finally:
        log.removeHandler(handler)
        log.setLevel(saved[0])
        log.propagate = saved[1]


if __name__ == "__main__":
    sys.exit(main())
