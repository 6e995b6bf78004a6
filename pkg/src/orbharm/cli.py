"""
Command line driver
===================

``orbharm SUBCOMMAND SCENARIO [--out DIR] [--dt DT] [--tol TOL] [--grid M] [--max-iter N]``

Each run writes ``<out>/<subcommand>.json`` plus any CSV grids. Exit status:

- 0: every requested check passed
- 1: at least one check failed (the report is still written)
- 2: unreadable or malformed scenario, or bad arguments

Only the ``wall_clock`` field of a report varies between identical runs.
``ORBH_THREADS`` caps the worker count for scenario-parallel work.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .atlas import Domain, isotropy_order, validate_atlas
from .errors import CheckFailed, Diverged, OrbharmError, SchemaError
from .foliation import leaf_space_orbifold, theorem_harness
from .geometry import (christoffel, is_spd, metric_compatibility_residual, metric_invariance_residual,
                       stabilizer_algebra_dim, infinitesimal_action_matrix)
from .harmonic import FlowParams, dirichlet_problem, heat_flow, tension
from .orbmap import validate_map
from .report import to_jsonable, write_csv, write_json
from .scenario import SUBCOMMANDS, Scenario

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("ORBH_THREADS", "1")))
    except ValueError:
        return 1


def spiral_points(n: int, radius: float = 0.5) -> np.ndarray:
    """``n`` deterministic points filling a disk (golden-angle spiral)."""
    k = np.arange(n) + 0.5
    r = radius * np.sqrt(k / n)
    th = k * np.pi * (3 - np.sqrt(5))
    return np.column_stack([r * np.cos(th), r * np.sin(th)])


def _metric_samples(metric, n: int) -> np.ndarray:
    dom = metric.domain
    if metric.dim == 2:
        rad = 0.5 * dom.radius if dom is not None and dom.kind == "disk" else 0.5
        return spiral_points(n, rad)
    dom = dom or Domain.box([-0.5] * metric.dim, [0.5] * metric.dim)
    pts = dom.sample(5, shrink=0.5)
    return pts[np.linspace(0, len(pts) - 1, min(n, len(pts))).astype(int)]


class Run:
    """Collects check entries, details and CSV fields for one subcommand invocation."""

    def __init__(self, sub: str, scenario: Scenario):
        self.sub, self.scenario = sub, scenario
        self.checks: list[dict] = []
        self.details: dict = {}
        self.fields: dict = {}

    def check(self, name: str, passed: bool, residual=None, **info):
        entry = {"name": name, "passed": bool(passed)}
        if residual is not None:
            entry["residual"] = float(residual)
        entry.update(info)
        self.checks.append(entry)
        return entry

    def field(self, name: str, columns, rows, comment: str):
        self.fields[name] = (list(columns), np.asarray(rows, float).reshape(-1, len(columns)), comment)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def report(self, outputs) -> dict:
        return {"subcommand": self.sub, "scenario": self.scenario.name, "passed": self.passed,
                "checks": self.checks, "details": self.details, "outputs": sorted(outputs),
                "version": __version__}


def emit_plot_data(fields: dict, out: Path) -> list[str]:
    """One CSV per field: node coordinates then values, with a ``#`` comment line for units."""
    names = []
    for name, (cols, rows, comment) in sorted(fields.items()):
        write_csv(out / f"{name}.csv", cols, rows, comment=comment)
        names.append(f"{name}.csv")
    return names


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_validate_atlas(run: Run, args):
    sc = run.scenario
    for name in sc.checks("validate-atlas") or sc.names["atlases"]:
        rep = validate_atlas(sc.atlas(name), tol=sc.tolerance)
        run.details[name] = rep.to_dict()
        run.check(f"atlas:{name}", rep.passed, rep.max_residual(), failures=len(rep.failures()))


def cmd_validate_map(run: Run, args):
    sc = run.scenario
    for name in sc.checks("validate-map") or sc.names["maps"]:
        rep = validate_map(sc.map(name), tol=sc.tolerance)
        run.details[name] = rep.to_dict()
        run.check(f"map:{name}", rep.passed, rep.max_residual(), failures=len(rep.failures()))


def cmd_metric_check(run: Run, args):
    sc = run.scenario
    items = sc.checks("metric-check") or [{"metric": m} for m in sc.names["metrics"]]
    for item in items:
        name = item["metric"]
        g = sc.metric(name)
        pts = _metric_samples(g, 20)
        spd, lo, hi = is_spd(g, pts)
        run.check(f"spd:{name}", spd, min_eigenvalue=lo, max_eigenvalue=hi)
        comp = metric_compatibility_residual(g, pts)
        run.check(f"compatibility:{name}", comp < 1e-5, comp)
        if "atlas" in item:
            for c in sc.atlas(item["atlas"]).charts:
                dom = g.domain or c.domain
                res = metric_invariance_residual(g, c.action, domain=dom)
                run.check(f"invariance:{name}:{item['atlas']}:{c.id}", res < sc.tolerance, res)


def cmd_christoffel(run: Run, args):
    sc = run.scenario
    items = sc.checks("christoffel") or [{"metric": m} for m in sc.names["metrics"]]
    for item in items:
        name = item["metric"]
        g = sc.metric(name)
        h = item.get("h", 1e-3)
        tol = item.get("tol", 1e-5)
        pts = _metric_samples(g, item.get("points", 20))
        fd = christoffel(g, pts, h, mode="fd")
        n = g.dim
        cols = [f"x{i}" for i in range(n)] + [f"G{k}_{i}{j}" for k in range(n) for i in range(n) for j in range(n)]
        run.field(f"christoffel_{name}", cols, np.column_stack([pts, fd.reshape(len(pts), -1)]),
                  f"Christoffel symbols Gamma^k_ij of {name}, central differences with h={h!r}")
        if g.analytic:
            exact = christoffel(g, pts, mode="analytic")
            e1 = float(np.abs(fd - exact).max())
            e2 = float(np.abs(christoffel(g, pts, h / 2, mode="fd") - exact).max())
            run.check(f"fd_vs_analytic:{name}", e1 < tol, e1, h=h)
            # exact (flat) or already at rounding level: no order to measure
            ratio = e1 / e2 if e2 > 0 else float("inf")
            run.check(f"second_order:{name}", e1 < 1e-13 or ratio >= 3.0, ratio=ratio, error_half_step=e2)
        else:
            e1 = float(np.abs(fd - christoffel(g, pts, h / 2, mode="fd")).max())
            run.check(f"step_halving:{name}", e1 < tol, e1, h=h)


def cmd_tension(run: Run, args):
    sc = run.scenario
    items = sc.checks("tension") or []
    if not items:
        raise SchemaError("checks/tension: no tension checks requested")
    for k, item in enumerate(items):
        fmap = sc.map(item["map"])
        gs, gt = sc.metric(item["source_metric"]), sc.metric(item["target_metric"])
        tol = args.tol or item.get("tol", 1e-6)
        m = args.grid or item.get("grid", 17)
        for cid in ([item["chart"]] if "chart" in item else list(fmap.lifts)):
            tf = tension(fmap, gs, gt, chart=cid, m=m)
            label = f"{item['map']}:{cid}"
            expect = item.get("expect", "harmonic")
            if expect == "harmonic":
                run.check(f"harmonic:{label}", tf.sup_norm < tol, tf.sup_norm, tolerance=tol)
            else:
                dev = float(np.abs(tf.norms - expect).max())
                run.check(f"tension_norm:{label}", dev < tol, dev, expected=expect, tolerance=tol)
            eq = tf.equivariance_residual(fmap.source[cid].action, fmap.theta_matrices(cid))
            run.details[label] = {"sup_norm": tf.sup_norm, "points": len(tf.points),
                                  "equivariance_residual": eq}
            n, mm = tf.points.shape[1], tf.values.shape[1]
            cols = [f"x{i}" for i in range(n)] + [f"tau{a}" for a in range(mm)] + ["norm"]
            run.field(f"tension_{item['map']}_{cid}", cols,
                      np.column_stack([tf.points, tf.values, tf.norms]),
                      "tension field; source chart coordinates, target chart components, Euclidean norm")


def flow_params(spec: dict, args) -> FlowParams:
    kw = {k: spec[k] for k in ("dt", "tol", "max_iter", "grid", "average", "local_step", "growth_window",
                                      "clamp_fraction")
          if k in spec}
    kw.update({k: v for k, v in (("dt", args.dt), ("tol", args.tol), ("max_iter", args.max_iter),
                                 ("grid", args.grid)) if v is not None})
    return FlowParams(**kw)


def cmd_flow(run: Run, args):
    sc = run.scenario
    if "flow" not in sc.doc:
        raise SchemaError("flow: scenario has no flow section")
    spec = sc.doc["flow"]
    params = flow_params(spec, args)
    fmap = sc.map(spec["map"])
    cid = spec.get("chart", fmap.source.charts[0].id)
    boundary = sc.map(spec.get("boundary", spec["map"])).chart_lift(cid).lift
    start = dirichlet_problem(fmap, boundary, spec.get("kind", "cartesian"), params.grid, cid)
    gs, gt = sc.metric(spec["source_metric"]), sc.metric(spec["target_metric"])
    try:
        result, diag = heat_flow(start, gs, gt, params, chart=cid, boundary=boundary)
    except Diverged as exc:
        run.check("flow_converged", False, reason=str(exc))
        if exc.diagnostics is not None:
            run.field("flow_diagnostics", *_diag_field(exc.diagnostics))
        return
    grid = result.chart_lift(cid).lift
    run.details["params"] = {"dt": diag.dt, "tol": params.tol, "max_iter": params.max_iter, "grid": params.grid,
                             "kind": grid.kind}
    run.details["iterations"] = diag.iterations
    run.details["reason"] = diag.reason
    run.check("flow_converged", diag.reason == "tolerance", diag.sup_tau[-1], iterations=diag.iterations)
    E = np.asarray(diag.energy)
    rise = float(np.diff(E[5:]).max()) if len(E) > 6 else 0.0
    run.check("energy_nonincreasing", rise <= 1e-12, max(rise, 0.0), after_iteration=5)
    eq = float(np.max(diag.equivariance)) if len(diag.equivariance) else 0.0
    run.check("equivariance", eq < 1e-12, eq)
    if "max_final_error" in spec:
        act = grid.active.reshape(-1)
        err = float(np.abs(grid.flat_values()[act] - boundary(grid.nodes()[act])).max())
        run.check("final_error", err < spec["max_final_error"], err, reference=spec.get("boundary", spec["map"]))
    run.field("flow_diagnostics", *_diag_field(diag))
    nodes, vals = grid.nodes(), grid.flat_values()
    cols = [f"x{i}" for i in range(nodes.shape[1])] + [f"f{a}" for a in range(vals.shape[1])] + ["frozen"]
    run.field("flow_grid", cols, np.column_stack([nodes, vals, grid.frozen.reshape(-1)]),
              f"final grid lift; {grid.header()}")


def _diag_field(diag):
    cols = ["iteration", "energy", "sup_tau", "equivariance_residual", "clamped"]
    return cols, np.asarray(diag.rows(), float).reshape(-1, len(cols)), \
        "flow diagnostics; energy per fundamental domain, sup of the Euclidean norm of tau"


def cmd_stabilizer(run: Run, args):
    sc = run.scenario
    items = sc.checks("stabilizer") or [{"tensor": t} for t in sc.names["tensors"]]
    for item in items:
        T0 = sc.tensor(item["tensor"])
        dim = stabilizer_algebra_dim(T0)
        M = infinitesimal_action_matrix(T0)
        sv = np.linalg.svd(M, compute_uv=False)
        run.details[item["tensor"]] = {"n": T0.dim, "valence": [T0.p, T0.q], "algebra_dim": dim,
                                       "action_matrix_shape": list(M.shape), "singular_values": sv.tolist()}
        if "expected_dim" in item:
            run.check(f"stabilizer:{item['tensor']}", dim == item["expected_dim"], algebra_dim=dim,
                      expected=item["expected_dim"])
        else:
            run.check(f"stabilizer:{item['tensor']}", True, algebra_dim=dim)


def cmd_foliation_build(run: Run, args):
    sc = run.scenario
    for name in sc.checks("foliation-build") or sc.names["foliations"]:
        try:
            fm = sc.foliation(name)
        except OrbharmError as exc:
            run.check(f"build:{name}", False, error=type(exc).__name__, reason=str(exc))
            continue
        rep = fm.cocycle_report(tol=sc.tolerance)
        detail = {"foliation": fm.to_dict(), "cocycle": rep.to_dict()}
        run.check(f"cocycle:{name}", rep.passed, rep.max_residual())
        if fm.compact_leaves:
            X = leaf_space_orbifold(fm)
            arep = validate_atlas(X, tol=sc.tolerance)
            run.check(f"leaf_space:{name}", arep.passed, arep.max_residual())
            origin = np.zeros(fm.q)
            iso = isotropy_order(X, "N_a", origin)
            run.check(f"cone_point_isotropy:{name}", iso == fm.order, isotropy=iso, holonomy_order=fm.order)
            detail["leaf_space"] = arep.to_dict()
        run.details[name] = detail


def cmd_foliation_harness(run: Run, args):
    sc = run.scenario
    cfg = sc.checks("foliation-harness") or {}
    names = cfg.get("maps") or sc.names["foliated_maps"]
    tol = args.tol or cfg.get("tol", 1e-5)
    maps = [sc.foliated_map(n) for n in names]
    res = theorem_harness(maps, tol=tol, threads=thread_count(), keep_fields=True)
    for r in res["scenarios"]:
        tt = r.pop("fields")
        rows, q = tt.rows()
        cols = ["t"] + [f"x{i}" for i in range(tt.points.shape[1] - 1)] + \
            [f"dp2_tau_b{a}" for a in range(q)] + [f"tau_fbar{a}" for a in range(q)]
        run.field(f"transverse_tension_{r['name']}", cols, rows,
                  "total-space sample points; transverse part of tau_b and tension of the induced map")
    run.details = {"scenarios": res["scenarios"], "threshold": tol}
    s = res["summary"]
    for key in ("a", "c", "d", "e"):
        run.check(f"theorem_{key}", s[key]["passed"], applicable=s[key]["applicable"], agree=s[key]["agree"])
    run.check("theorem_b", s["b"]["passed"], applicable=s["b"]["applicable"], violations=s["b"]["violations"])
    run.check("projection_identity", s["projection_identity"]["passed"],
              s["projection_identity"]["max_discrepancy"])


COMMANDS = {
    "validate-atlas": cmd_validate_atlas,
    "validate-map": cmd_validate_map,
    "metric-check": cmd_metric_check,
    "christoffel": cmd_christoffel,
    "tension": cmd_tension,
    "flow": cmd_flow,
    "stabilizer": cmd_stabilizer,
    "foliation-build": cmd_foliation_build,
    "foliation-harness": cmd_foliation_harness,
}
assert set(COMMANDS) == set(SUBCOMMANDS)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="orbharm", description="Orbifold harmonic map scenarios.")
    ap.add_argument("--version", action="version", version=f"orbharm {__version__}")
    subs = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = subs.add_parser(name)
        p.add_argument("scenario", help="scenario JSON file, or the name of a shipped scenario")
        p.add_argument("--out", type=Path, default=None, help="output directory (default orbharm-out/<scenario>)")
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--grid", type=int, default=None)
        p.add_argument("--max-iter", type=int, default=None, dest="max_iter")
    return ap


def run(subcommand: str, scenario_path, args=None, out: Path | None = None) -> tuple[int, dict]:
    """Run one subcommand; returns ``(exit code, report)`` and writes the outputs."""
    args = args or build_parser().parse_args([subcommand, str(scenario_path)])
    t0 = time.perf_counter()
    started = datetime.now(timezone.utc).isoformat()
    sc = Scenario.load(scenario_path)
    job = Run(subcommand, sc)
    try:
        COMMANDS[subcommand](job, args)
    except SchemaError:
        raise
    except OrbharmError as exc:
        job.check("error", False, error=type(exc).__name__, reason=str(exc))
    out = Path(out or args.out or Path("orbharm-out") / sc.name)
    out.mkdir(parents=True, exist_ok=True)
    outputs = emit_plot_data(job.fields, out) + [f"{subcommand}.json"]
    report = job.report(outputs)
    report["wall_clock"] = {"started": started, "seconds": time.perf_counter() - t0}
    write_json(out / f"{subcommand}.json", report)
    return (EXIT_OK if job.passed else EXIT_FAILED), report


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        code, report = run(args.subcommand, args.scenario, args)
    except (SchemaError, FileNotFoundError) as exc:
        print(f"orbharm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    status = "PASS" if code == EXIT_OK else "FAIL"
    out = Path(args.out or Path("orbharm-out") / report["scenario"])
    print(f"{args.subcommand} {report['scenario']}: {status} "
          f"({sum(c['passed'] for c in report['checks'])}/{len(report['checks'])} checks) -> {out}")
    for c in report["checks"]:
        if not c["passed"]:
            info = {k: v for k, v in c.items() if k != "name"}
            print(f"  failed: {c['name']} {json.dumps(to_jsonable(info), sort_keys=True)}")
    if code != EXIT_OK:
        print(f"orbharm: {CheckFailed.__name__}: {subcommand_failures(report)} check(s) failed", file=sys.stderr)
    return code


def subcommand_failures(report: dict) -> int:
    return sum(not c["passed"] for c in report["checks"])


if __name__ == "__main__":
    sys.exit(main())
