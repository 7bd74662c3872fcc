"""Batch front-end: ``progpgd run|compare|gradcheck --config cfg.json --out dir``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure in the
solver, 3 a requested check failed (``--verify`` or compare/gradcheck
tolerances).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path

import jsonschema
import numpy as np

from .functionals import ellipticity_check
from .io import fmt, read_report_csv, report_to_csv, save_separated, verify_report_rows
from .oracles import OracleNotConverged, dense_minimize, fd_grad_check, truncated_svd
from .problems import PROBLEM_SCHEMA, ConfigError, build_problem
from .solver import NumericalFailure, SolverConfig, a_posteriori_bound, parse_schedule, pgd_solve
from .tensor_core import DenseCapError, as_array

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3

CHECKS = ("monotone", "correction", "euler", "summability")

_SOLVER_PROPS = {
    "max_rank": {"type": "integer", "minimum": 1},
    "als_max_sweeps": {"type": "integer", "minimum": 1},
    "als_rel_tol": {"type": "number", "minimum": 0},
    "multistarts": {"type": "integer", "minimum": 1},
    "seed": {"type": "integer"},
    "outer_stagnation_tol": {"type": "number", "minimum": 0},
    "zm_norm_tol": {"type": "number", "minimum": 0},
    "r_subspace": {"enum": ["span_zhat", "dim_k"]},
    "r_dim": {"type": "integer", "minimum": 1},
    "l_subspace": {"enum": ["span_all_terms", "dim_sweep"]},
    "inner_solver": {"enum": ["auto", "exact_linear", "damped_newton", "gradient_backtracking"]},
    "inner_max_iter": {"type": "integer", "minimum": 1},
}
assert set(_SOLVER_PROPS) == {f.name for f in fields(SolverConfig)}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "problem": PROBLEM_SCHEMA,
        "schedule": {"type": "string"},
        "solver": {"type": "object", "properties": _SOLVER_PROPS, "additionalProperties": False},
        "output": {"type": "string"},
        "checks": {"type": "array", "items": {"enum": list(CHECKS)}},
        "tolerances": {
            "type": "object",
            "properties": {k: {"type": "number", "minimum": 0} for k in
                           ("sigma", "parseval", "gap", "fd", "invariant_slack")},
            "additionalProperties": False,
        },
        "gradcheck": {
            "type": "object",
            "properties": {"points": {"type": "integer", "minimum": 1},
                           "directions": {"type": "integer", "minimum": 1},
                           "samples": {"type": "integer", "minimum": 1},
                           "seed": {"type": "integer"}},
            "additionalProperties": False,
        },
        "timings": {"type": "boolean"},
    },
    "required": ["problem"],
    "additionalProperties": False,
}


def load_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from exc
    cfg["_base_dir"] = str(path.parent)
    return cfg


def _solver_config(cfg) -> SolverConfig:
    return SolverConfig(**cfg.get("solver", {}))


def _out_dir(cfg, args) -> Path:
    out = Path(args.out or cfg.get("output") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tol(cfg, key, default):
    return cfg.get("tolerances", {}).get(key, default)


def evaluate_checks(report, names=CHECKS, slack=1e-10) -> dict:
    """Evaluate the per-run invariants named in ``names`` on a report."""
    J = report.J_values
    scale = report.scale
    out = {}
    if "monotone" in names:
        out["monotone"] = bool(np.all(np.diff(J) <= 1e-12 * scale))
    if "correction" in names:
        dec = -np.diff(J)
        zs = np.array([r.z_norm for r in report.records]) ** report.s
        out["correction"] = bool(np.all(dec >= report.alpha / report.s * zs - slack * scale))
    if "euler" in names:
        out["euler"] = all(r.euler_residual <= 1e-6 * (1 + abs(r.J_value))
                           for r in report.records if r.als_converged)
    if "summability" in names:
        bound = report.s / report.alpha * (report.J0 - report.final_J)
        out["summability"] = bool(report.sum_zs <= bound + 1e-8 * scale)
    return out


def _run_solver(problem, cfg):
    schedule = parse_schedule(cfg.get("schedule", "c*"))
    return pgd_solve(problem.J, schedule, _solver_config(cfg))


# ---------------------------------------------------------------------------


def cmd_run(cfg, args) -> int:
    problem = build_problem(cfg["problem"], cfg["_base_dir"])
    out = _out_dir(cfg, args)
    u, report = _run_solver(problem, cfg)
    csv_text = report_to_csv(report, timings=cfg.get("timings", False))
    (out / "report.csv").write_text(csv_text)
    summary = report.to_json()
    summary["schedule"] = cfg.get("schedule", "c*")
    summary["functional"] = problem.J.label
    checks = evaluate_checks(report, cfg.get("checks", CHECKS), _tol(cfg, "invariant_slack", 1e-10))
    summary["checks"] = checks
    (out / "summary.json").write_text(json.dumps(summary, indent=2, allow_nan=False) + "\n")
    save_separated(out / "solution.json", u)
    print(f"{problem.J.label}: {len(report.records)} steps, stop={report.stop_reason}, "
          f"J={report.final_J:.12g}")
    for name, ok in checks.items():
        print(f"  {name:12s} {'PASS' if ok else 'FAIL'}")
    if args.verify:
        rows = read_report_csv(out / "report.csv")
        problems = verify_report_rows(rows, report.J0, report.s, report.alpha,
                                      _tol(cfg, "invariant_slack", 1e-10),
                                      _solver_config(cfg).als_max_sweeps)
        for msg in problems:
            print(f"verify: {msg}", file=sys.stderr)
        if problems:
            return EXIT_CHECK
        print(f"verify: {len(rows)} rows OK")
    return EXIT_OK


COMPARE_COLUMNS = ["epsilon", "m", "J_pgd", "J_oracle", "J_gap", "sigma_pgd", "sigma_oracle",
                   "pgd_error", "oracle_error", "bound", "violation"]


def _relative_gap(J_final, J_star, J0):
    # J* = 0 happens when the target is attainable; fall back to the initial gap
    denom = abs(J_star) if abs(J_star) > 1e-12 * abs(J0 - J_star) else abs(J0 - J_star)
    return (J_final - J_star) / max(denom, 1e-300)


def _compare_svd(problem, cfg, rows, results):
    J = problem.J
    X = problem.target
    snaps = []
    _, report = pgd_solve(J, parse_schedule(cfg.get("schedule", "c*")), _solver_config(cfg),
                          callback=lambda m, u, rec: snaps.append(as_array(u)))
    m_max = len(report.records)
    svd = truncated_svd(X, min(m_max, min(X.shape)), problem.space)
    sig_all = svd.all_sigma
    norm_u2 = J.norm(X) ** 2
    J_star = -0.5 * norm_u2
    sig_pgd = np.array([r.sigma for r in report.records])
    cum = np.cumsum(sig_pgd**2)
    worst_sigma = worst_parseval = 0.0
    bound_ok = ey_ok = True
    for i, rec in enumerate(report.records):
        m = rec.m
        err = J.norm(X - snaps[i])
        oracle_err = float(np.sqrt(np.sum(sig_all[m:] ** 2)))
        gap = max(rec.J_value - J_star, 0.0)
        bound = a_posteriori_bound(gap, J.s, J.alpha)
        worst_sigma = max(worst_sigma, abs(sig_pgd[i] - sig_all[i]) / sig_all[0])
        worst_parseval = max(worst_parseval, abs(err**2 - (norm_u2 - cum[i])) / norm_u2)
        bound_ok &= bound >= err * (1 - 1e-8)
        ey_ok &= err >= oracle_err * (1 - 1e-8)
        rows.append(["", m, rec.J_value, J_star, gap, sig_pgd[i], sig_all[i], err,
                     oracle_err, bound, ""])
    results["sigma_match"] = (worst_sigma, worst_sigma <= _tol(cfg, "sigma", 1e-6))
    results["parseval"] = (worst_parseval, worst_parseval <= _tol(cfg, "parseval", 1e-8))
    results["bound_holds"] = (None, bool(bound_ok))
    results["eckart_young"] = (None, bool(ey_ok))


def _compare_dense(problem, cfg, rows, results, epsilon=None):
    J = problem.J
    sol = dense_minimize(J)
    snaps = []
    _, report = pgd_solve(J, parse_schedule(cfg.get("schedule", "c*")), _solver_config(cfg),
                          callback=lambda m, u, rec: snaps.append(as_array(u)))
    U = sol.u.array
    # both minima are only known up to rounding, so the bound is checked with
    # a gap floor of a few ulps of J and the oracle's own distance to the best J seen
    J_ref = min(sol.J, report.final_J)
    floor = 64 * np.finfo(float).eps * report.scale
    slack = a_posteriori_bound(sol.J - J_ref + floor, J.s, J.alpha)
    bound_ok = True
    viol = None
    for i, rec in enumerate(report.records):
        err = J.norm(U - snaps[i])
        gap = max(rec.J_value - J_ref, 0.0)
        bound = a_posteriori_bound(gap, J.s, J.alpha)
        bound_ok &= err <= a_posteriori_bound(gap + floor, J.s, J.alpha) + slack
        viol = J.violation(snaps[i]) if hasattr(J, "violation") else None
        rows.append([epsilon, rec.m, rec.J_value, sol.J, rec.J_value - sol.J, None, None,
                     err, None, bound, viol])
    rel = _relative_gap(report.final_J, sol.J, report.J0)
    tag = "" if epsilon is None else f"[eps={epsilon:g}]"
    results["gap" + tag] = (rel, rel <= _tol(cfg, "gap", 1e-3))
    results["bound_holds" + tag] = (None, bool(bound_ok))
    return viol


def cmd_compare(cfg, args) -> int:
    params = cfg["problem"]
    out = _out_dir(cfg, args)
    rows, results = [], {}
    if params["type"] == "penalized" and "epsilons" in params:
        viols = []
        for eps in params["epsilons"]:
            problem = build_problem(params, cfg["_base_dir"], epsilon=eps)
            problem.space.check_cap()
            viols.append(_compare_dense(problem, cfg, rows, results, eps))
        order = np.argsort(params["epsilons"])[::-1]  # largest epsilon first
        v = np.array(viols, float)[order]
        results["violation_decreasing"] = (None, bool(np.all(np.diff(v) < 0)))
    else:
        problem = build_problem(params, cfg["_base_dir"])
        problem.space.check_cap()
        if problem.identity_quadratic and problem.space.d == 2 and problem.target is not None:
            _compare_svd(problem, cfg, rows, results)
        else:
            _compare_dense(problem, cfg, rows, results)
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        for row in rows:
            w.writerow([x if isinstance(x, (int, str)) else fmt(x) for x in row])
    ok = all(passed for _, passed in results.values())
    (out / "compare.json").write_text(json.dumps(
        {k: {"value": v, "pass": bool(p)} for k, (v, p) in results.items()}, indent=2) + "\n")
    for name, (val, passed) in results.items():
        shown = "" if val is None else f"{val:.3e}"
        print(f"{name:32s} {shown:>10s}  {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def _gradcheck_point(J, rng):
    v = rng.uniform(-1, 1, J.space.dims)
    if hasattr(J, "obstacle"):
        # keep every entry at least 10 finite-difference steps away from the kink
        g = J.obstacle
        sign = rng.choice([-1.0, 1.0], size=g.shape)
        for margin in 10.0 ** np.arange(-3, 3):
            v = g + sign * (margin + np.abs(v))
            h = np.finfo(float).eps ** (1 / 3) * (1 + np.linalg.norm(v))
            if np.min(np.abs(v - g)) > 10 * h:
                break
    return v


def cmd_gradcheck(cfg, args) -> int:
    problem = build_problem(cfg["problem"], cfg["_base_dir"])
    J = problem.J
    out = _out_dir(cfg, args)
    gc = cfg.get("gradcheck", {})
    rng = np.random.default_rng(gc.get("seed", 0))
    fd_tol = _tol(cfg, "fd", 1e-9 if J.is_quadratic else 1e-6)
    rows = []
    ok = True
    for i in range(gc.get("points", 5)):
        v = _gradcheck_point(J, rng)
        err = fd_grad_check(J, v, gc.get("directions", 5), seed=i)
        passed = err <= fd_tol
        ok &= passed
        rows.append(("fd_grad", i, err, fd_tol, passed))
    ell = ellipticity_check(J, gc.get("samples", 20), gc.get("seed", 0))
    ok &= ell.passed
    rows.append(("ellipticity", 0, ell.min_ratio, ell.alpha, ell.passed))
    with open(out / "gradcheck.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "point", "value", "threshold", "pass"])
        for name, i, val, thr, passed in rows:
            w.writerow([name, i, fmt(val), fmt(thr), int(passed)])
    print(f"{'check':12s} {'pt':>3s} {'value':>12s} {'threshold':>12s}")
    for name, i, val, thr, passed in rows:
        print(f"{name:12s} {i:3d} {val:12.3e} {thr:12.3e}  {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "gradcheck": cmd_gradcheck}


def build_parser():
    parser = argparse.ArgumentParser(prog="progpgd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", help="output directory (overrides config 'output')")
        if name == "run":
            p.add_argument("--verify", action="store_true",
                           help="re-read report.csv and re-check per-iteration invariants")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if "schedule" in cfg:
            parse_schedule(cfg["schedule"])
        _solver_config(cfg).validate(len(cfg["problem"]["dims"]))
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, DenseCapError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, OracleNotConverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
