"""Command line driver: solve | metrics | sk-target | validate.

Exit codes: 0 success, 1 usage or schema error, 2 not converged or a
constraint violated, 3 solver failure.  Set LONGCAM_LOG (e.g. INFO, DEBUG)
for log output on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .conjunction import Conjunction, ballistic_metrics, build
from .dynamics import PropagationError, propagate_nodes
from .risk import MetricKind
from .scenario import ScenarioError, ScenarioSpec, load_scenario
from .scp import ManeuverPlan, ScpConfig, ScpSolverError, run, validate_plan
from .sk import SkBox, SkTargetError, solve_sk_target

log = logging.getLogger("longcam")

EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, EXIT_SOLVER = 0, 1, 2, 3
_METRIC_UNIT = {MetricKind.IPC: "-", MetricKind.MAX_IPC: "-", MetricKind.MISS_DISTANCE: "km"}


def _fmt(v) -> str:
    return f"{float(v):.12e}"


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([x if isinstance(x, (int, str)) else _fmt(x) for x in r])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _outdir(arg: Optional[str], default: str) -> Path:
    p = Path(arg or default)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ------------------------------------------------------------------- solve

def plan_rows(conj: Conjunction, plan: ManeuverPlan):
    unit = _METRIC_UNIT[plan.metric.kind]
    header = ["node", "t_over_T[-]", "epoch[s_TT]", "x[km]", "y[km]", "z[km]", "vx[km/s]",
              "vy[km/s]", "vz[km/s]", "ux[km/s2]", "uy[km/s2]", "uz[km/s2]", "slack[-]",
              "dv_R[mm/s]", "dv_T[mm/s]", "dv_N[mm/s]", "dv[mm/s]", "d_m2[-]",
              f"metric_{plan.metric.kind.value}[{unit}]", "dbar2[-]"]
    rtn = plan.dv_rtn()
    rows = []
    for i in range(conj.N + 1):
        u = plan.controls[i] if i < conj.N else np.zeros(3)
        dv = rtn[i] if i < conj.N else np.zeros(3)
        sl = plan.slack[i] if i < conj.N else 0.0
        rows.append([i, conj.t_over_T[i], conj.epochs[i], *plan.states[i], *u, sl, *dv,
                     float(np.linalg.norm(dv)), plan.d_m2[i], plan.metric_values[i], plan.dbar2[i]])
    return header, rows


def plan_summary(spec: ScenarioSpec, plan: ManeuverPlan) -> dict:
    v = plan.validation
    return {
        "scenario": spec.name,
        "metric": plan.metric.kind.value,
        "threshold": plan.metric.threshold,
        "status": plan.status,
        "valid": bool(v.valid) if v else None,
        "n_maj": plan.n_maj,
        "n_min": plan.n_min,
        "dv_total_mm_s": plan.dv_total,
        "e_m": v.e_m if v else None,
        "vc_sum": plan.vc_sum,
        "dt_s": plan.dt,
        "u_max_km_s2": plan.u_max,
        "controls_km_s2": plan.controls.tolist(),
        "x_target": None if plan.x_target is None else np.asarray(plan.x_target).tolist(),
        "trace": plan.trace,
    }


def report_text(spec: ScenarioSpec, cfg: ScpConfig, plan: ManeuverPlan) -> str:
    v = plan.validation
    rtn = plan.dv_rtn()
    lines = [
        f"scenario      {spec.name}",
        f"metric        {plan.metric.kind.value} threshold {plan.metric.threshold:g}",
        f"options       sk_box={cfg.sk_box} sk_target={cfg.sk_target} "
        f"return={cfg.return_to_orbit} sensitivity="
        f"{cfg.sensitivity.rho if cfg.sensitivity else 'off'}",
        f"status        {plan.status}",
        f"valid         {v.valid if v else 'n/a'}",
        f"n_maj n_min   {plan.n_maj} {plan.n_min}",
        f"e [m]         {v.e_m:.6f}" if v else "e [m]         n/a",
        f"total dv      {plan.dv_total:.3f} mm/s",
        f"dv R T N      {rtn[:, 0].sum():.3f} {rtn[:, 1].sum():.3f} {rtn[:, 2].sum():.3f} mm/s (signed sums)",
        "burns (node, t/T, |dv| mm/s, R, T, N):",
    ]
    N = len(plan.controls)
    for i in np.flatnonzero(plan.dv_node > 1e-3):
        lines.append(f"  {i:4d} {(i - spec.orbits_before * spec.nodes_per_orbit) / spec.nodes_per_orbit:+.4f} "
                     f"{plan.dv_node[i]:10.3f} {rtn[i, 0]:+9.3f} {rtn[i, 1]:+9.3f} {rtn[i, 2]:+9.3f}")
    lines.append("major iterations:")
    for t in plan.trace:
        if "err" in t:
            lines.append(f"  j={t['major']} minors={t['minors']} err={t['err']:.3e} "
                         f"vc={t['vc_sum']:.3e} dv={t['dv_mm_s']:.3f}")
    lines.append(f"segments      {N}")
    return "\n".join(lines) + "\n"


def cmd_solve(args) -> int:
    spec = load_scenario(args.scenario)
    conj = build(spec)
    cfg = ScpConfig.from_scenario(spec, conj.dt, metric=args.metric, sk=True if args.sk else None,
                                  return_to_orbit=True if args.return_ else None,
                                  rho=args.sensitivity)
    try:
        plan = run(conj, cfg)
    except (ScpSolverError, SkTargetError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out = _outdir(args.out, f"out_{spec.name}")
    header, rows = plan_rows(conj, plan)
    _write_csv(out / "nodes.csv", header, rows)
    _write_json(out / "plan.json", plan_summary(spec, plan))
    (out / "report.txt").write_text(report_text(spec, cfg, plan))
    print(f"{spec.name}: {plan.status} valid={plan.validation.valid} dv={plan.dv_total:.3f} mm/s "
          f"n_maj={plan.n_maj} e={plan.validation.e_m:.4f} m time={plan.wall_time:.1f} s")
    if not plan.converged:
        print("not converged; trace:", file=sys.stderr)
        for t in plan.trace:
            print(f"  {t}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK if plan.validation.valid else EXIT_VIOLATION


# ----------------------------------------------------------------- metrics

def cmd_metrics(args) -> int:
    spec = load_scenario(args.scenario)
    conj = build(spec)
    m = ballistic_metrics(conj, identity_cov=args.identity_cov)
    out = _outdir(args.out, f"out_{spec.name}")
    header = ["node", "t_over_T[-]", "epoch[s_TT]", "d_miss[km]", "d_m2[-]", "P_IC[-]", "P_IC_max[-]"]
    rows = [[i, conj.t_over_T[i], conj.epochs[i], m.d_miss[i], m.d_m2[i], m.ipc[i], m.max_ipc[i]]
            for i in range(conj.N + 1)]
    _write_csv(out / "metrics.csv", header, rows)
    print(f"{spec.name}: min d_miss {m.d_miss.min():.4f} km, max P_IC {m.ipc.max():.3e}, "
          f"max P_IC,m {m.max_ipc.max():.3e}")
    return EXIT_OK


# --------------------------------------------------------------- sk-target

def cmd_sk_target(args) -> int:
    spec = load_scenario(args.scenario)
    conj = build(spec)
    box = SkBox(spec.sk.phi0, spec.sk.delta_phi)
    days = args.days if args.days is not None else spec.sk.target_days
    M = max(2, int(round(days * spec.sk.nodes_per_day)))
    xN = conj.primary_ballistic.node(conj.N)
    try:
        res = solve_sk_target(xN, days, M, box, spec.primary.params, spec.forces,
                              margin=spec.sk.target_margin)
    except SkTargetError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out = _outdir(args.out, f"out_{spec.name}")
    _write_json(out / "target.json", {"epoch_tt_s": res.x_T.epoch, "x_T_km_km_s": res.x_T.x.tolist(),
                                      "violation_deg_node": res.violation,
                                      "objective_deg_node": res.objective,
                                      "iterations": res.iterations, "history": res.history})
    _write_csv(out / "coast.csv", ["node", "epoch[s_TT]", "lat[deg]", "lon[deg]"],
               [[j, res.epochs[j], *res.latlon[j]] for j in range(len(res.epochs))])
    print(f"{spec.name}: sk target violation {res.violation:.6e} deg*node after "
          f"{res.iterations} iterations")
    return EXIT_OK if res.violation == 0.0 else EXIT_VIOLATION


# ---------------------------------------------------------------- validate

def cmd_validate(args) -> int:
    spec = load_scenario(args.scenario)
    conj = build(spec)
    data = json.loads(Path(args.plan).read_text())
    U = np.asarray(data["controls_km_s2"], float)
    if U.shape != (conj.N, 3):
        print(f"plan has {U.shape[0]} segments, scenario has {conj.N}", file=sys.stderr)
        return EXIT_USAGE
    cfg = ScpConfig.from_scenario(spec, conj.dt, metric=data["metric"])
    x0 = conj.primary_ballistic.node(0)
    X = propagate_nodes(x0, U, conj.dt, spec.primary.params, spec.forces, conj.units)
    plan = ManeuverPlan(epochs=conj.epochs, states=X, controls=U, slack=np.linalg.norm(U, axis=1) / cfg.u_max,
                        dt=conj.dt, u_max=cfg.u_max, metric=cfg.metric, d_m2=np.zeros(conj.N + 1),
                        dbar2=np.zeros(conj.N + 1), metric_values=np.zeros(conj.N + 1),
                        vc_norms=np.zeros(conj.N), n_maj=0, n_min=0, converged=True)
    rep = validate_plan(conj, plan, cfg)
    bad = np.flatnonzero(~rep.node_ok)
    print(f"{spec.name}: valid={rep.valid} dv={plan.dv_total:.3f} mm/s "
          f"violating nodes={bad.tolist()}")
    return EXIT_OK if rep.valid else EXIT_VIOLATION


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="longcam", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("solve", help="optimise a collision-avoidance maneuver")
    s.add_argument("scenario", help="scenario file or bundled name")
    s.add_argument("--metric", choices=[k.value for k in MetricKind])
    s.add_argument("--sk", action="store_true", help="station-keeping box and 14-day target")
    s.add_argument("--return", dest="return_", action="store_true",
                   help="soft return to the ballistic final state")
    s.add_argument("--sensitivity", type=float, metavar="RHO", help="enable the gradient bound")
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("metrics", help="ballistic per-node metrics")
    m.add_argument("scenario")
    m.add_argument("--identity-cov", action="store_true", help="use P = I (d_m2 = d_miss^2)")
    m.add_argument("--out")
    m.set_defaults(func=cmd_metrics)

    t = sub.add_parser("sk-target", help="free-drift station-keeping target state")
    t.add_argument("scenario")
    t.add_argument("--days", type=float)
    t.add_argument("--out")
    t.set_defaults(func=cmd_sk_target)

    v = sub.add_parser("validate", help="re-propagate a saved plan")
    v.add_argument("scenario")
    v.add_argument("plan", help="plan.json written by solve")
    v.set_defaults(func=cmd_validate)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("LONGCAM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PropagationError as exc:
        print(f"propagation failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
