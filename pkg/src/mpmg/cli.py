"""Command-line experiment driver.

Subcommands ``solve``, ``sweep``, ``bounds``, ``fmg`` and ``gen`` read one
JSON config (schema-validated, unknown keys rejected) and write CSV/JSON
artifacts to ``--out``. Exit codes: 0 success, 1 usage or I/O error,
2 mathematical failure (divergence, violated hypothesis, failed accuracy).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import bounds as bd
from .cycles import CycleTrace, tg_solver, v_cycle_solver
from .hierarchy import Hierarchy, build_hierarchy
from .probgen import PROBLEM_NAMES, make_problem
from .refine import fmg, ir_solve
from .smoothers import SMOOTHER_KINDS
from .sparsekit import write_matrix_market, write_vector

log = logging.getLogger("mpmg")

EXIT_OK, EXIT_USAGE, EXIT_MATH = 0, 1, 2
DEFAULT_SEED = 42
SOLVERS = ("ir-v", "ir-tg", "fmg")

_P = {"oneOf": [{"type": "integer", "minimum": 2, "maximum": 53},
                {"enum": ["fp64", "fp32", "fp16", "bf16"]}]}
_SMOOTHER = {"oneOf": [
    {"enum": list(SMOOTHER_KINDS)},
    {"type": "object", "additionalProperties": False,
     "properties": {"kind": {"enum": list(SMOOTHER_KINDS)},
                    "omega": {"type": "number", "exclusiveMinimum": 0,
                              "exclusiveMaximum": 2},
                    "fraction": {"type": "number", "exclusiveMinimum": 1},
                    "inner": {"type": "array", "minItems": 2, "maxItems": 2,
                              "items": {"$ref": "#/$defs/smoother"}}}}]}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["problem"],
    "$defs": {"smoother": _SMOOTHER},
    "properties": {
        "problem": {"type": "object", "additionalProperties": False,
                    "required": ["name", "size"],
                    "properties": {"name": {"enum": list(PROBLEM_NAMES)},
                                   "size": {"type": "integer", "minimum": 1}}},
        "levels": {"type": ["integer", "null"], "minimum": 1},
        "smoother": {"$ref": "#/$defs/smoother"},
        "precision": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["uniform", "kappa-matched", "fixed-ladder"]},
                "triple": {"type": "object", "additionalProperties": False,
                           "properties": {"high": _P, "work": _P, "low": _P}},
                "target": {"type": "number", "exclusiveMinimum": 0},
                "floor": {"type": "integer", "minimum": 2, "maximum": 53},
                "ladder": {"type": "array", "items": _P}}},
        "solver": {"enum": list(SOLVERS)},
        "N": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "max_iter": {"type": "integer", "minimum": 1},
        "rhs": {"enum": ["manufactured", "random"]},
        "sweep": {"type": "object", "additionalProperties": False,
                  "required": ["axis", "values"],
                  "properties": {
                      "axis": {"enum": ["size", "precision"]},
                      "field": {"enum": ["high", "work", "low"]},
                      "values": {"type": "array", "minItems": 1,
                                 "items": {"type": "integer"}}}},
        "n_rhs": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "outputs": {"type": "object", "additionalProperties": False,
                    "properties": {k: {"type": "string"} for k in
                                   ("history", "report", "trace", "table",
                                    "bounds")}},
    },
}

DEFAULTS = {"levels": None, "smoother": "richardson",
            "precision": {"kind": "uniform",
                          "triple": {"high": 53, "work": 24, "low": 11}},
            "solver": "ir-v", "max_iter": 40, "rhs": "manufactured",
            "n_rhs": 20, "seed": DEFAULT_SEED, "outputs": {}}

OUTPUT_NAMES = {"history": "history.csv", "report": "report.json",
                "trace": "trace.jsonl", "table": "table.csv",
                "bounds": "bounds.json"}


class UsageError(Exception):
    """Bad config or I/O; maps to exit code 1."""


class MathFailure(Exception):
    """Divergence or a violated hypothesis; maps to exit code 2."""


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from exc
    return validate_config(cfg)


def validate_config(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"invalid config at {where}: {exc.message}") from exc
    out = json.loads(json.dumps(DEFAULTS))
    out.update(cfg)
    return out


# -- experiment construction --------------------------------------------------

def build_from_config(cfg: dict) -> Hierarchy:
    pr = cfg["problem"]
    try:
        problem = make_problem(pr["name"], pr["size"])
        if cfg["rhs"] == "random":
            rng = np.random.default_rng(cfg["seed"])
            b = rng.standard_normal(problem.n)
            problem = dataclasses.replace(problem, b=b, exact_solution=None)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return build_hierarchy(problem, cfg["levels"], cfg["precision"],
                                   cfg["smoother"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _inner(hier: Hierarchy, solver: str, trace):
    if solver == "ir-tg":
        return tg_solver(hier, trace)
    return v_cycle_solver(hier, trace)


def _predicted(hier: Hierarchy, solver: str):
    """Measured rho*, predicted (delta_ir, chi) and cycle bound ``rho*+delta``."""
    sub = bd.dense_capable(hier)
    rho_tg, rho_v = bd.measure_rho_star(sub)
    if hier.ell == 1:
        rho_tg = rho_v
    rho = rho_tg if solver == "ir-tg" else rho_v
    fin = hier.finest
    out = {"rho_star": rho, "delta_rho_ir": None, "chi": None,
           "cycle_bound": None}
    try:
        out["delta_rho_ir"], out["chi"] = bd.eval_ir_bounds(
            fin.A.stats, rho, fin.precisions, fin.A.m_A)
    except bd.BoundError as exc:
        out["note"] = str(exc)
    try:
        delta = (bd.two_grid_bound(hier).delta if solver == "ir-tg"
                 else bd.eval_v_bounds(hier))
        out["cycle_bound"] = rho + delta
    except bd.BoundError as exc:
        out["note"] = str(exc)
    return out


def run_solve(cfg: dict, trace: CycleTrace | None = None):
    """One IR solve; returns ``(report_dict, SolveReport)``."""
    hier = build_from_config(cfg)
    fin = hier.finest
    pred = _predicted(hier, cfg["solver"])
    tol = cfg.get("tol")
    if tol is None:
        chi = pred["chi"] or fin.eps_work
        tol = max(1e-2 * chi * float(np.linalg.norm(fin.b)),
                  np.finfo(float).tiny)
    _, rep = ir_solve(fin.A, fin.b, _inner(hier, cfg["solver"], trace),
                      fin.precisions, tol=tol, max_iter=cfg["max_iter"])
    st = fin.A.stats
    summary = {
        "problem": cfg["problem"], "n": fin.n, "levels": hier.ell,
        "solver": cfg["solver"], "precisions": fin.precisions.to_dict(),
        "kappa": st.kappa, "tau": math.sqrt(st.kappa) * fin.eps_work,
        "tol": tol, "predicted": pred, "result": rep.to_dict(),
    }
    return bd.json_safe(summary), rep


# -- subcommands --------------------------------------------------------------

def _write(out: Path, name: str, text: str, cfg: dict):
    path = out / cfg["outputs"].get(name, OUTPUT_NAMES[name])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from exc
    return path


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_solve(cfg: dict, out: Path, trace: bool) -> int:
    if cfg["solver"] == "fmg":
        return cmd_fmg(cfg, out, trace)
    tr = CycleTrace() if trace else None
    summary, rep = run_solve(cfg, tr)
    _write(out, "history", rep.history_csv(), cfg)
    _write(out, "report", _dumps(summary), cfg)
    if tr is not None:
        _write(out, "trace", tr.to_jsonl(), cfg)
    res = summary["result"]
    print(f"iterations={res['iterations']} converged={res['converged']} "
          f"final_rel_error={rep.final_error:.3e} floor={rep.floor:.3e}")
    if rep.diverged:
        print("error: iteration diverged", file=sys.stderr)
        return EXIT_MATH
    return EXIT_OK


def _sweep_point(cfg: dict) -> dict:
    summary, rep = run_solve(cfg)
    pred = summary["predicted"]
    return {"n": summary["n"], "p_high": summary["precisions"]["high"],
            "p_work": summary["precisions"]["work"],
            "p_low": summary["precisions"]["low"], "kappa": summary["kappa"],
            "tau": summary["tau"], "floor": rep.floor,
            "measured_rho": rep.measured_rho,
            "predicted_chi": pred["chi"],
            "predicted_rho_plus_delta": (
                None if pred["delta_rho_ir"] is None
                else pred["rho_star"] + pred["delta_rho_ir"]),
            "diverged": rep.diverged}


def sweep_configs(cfg: dict) -> list[dict]:
    sw = cfg.get("sweep")
    if sw is None:
        raise UsageError("sweep requires a 'sweep' section in the config")
    out = []
    for v in sw["values"]:
        c = json.loads(json.dumps(cfg))
        c.pop("sweep")
        if sw["axis"] == "size":
            c["problem"]["size"] = v
        else:
            c["precision"].setdefault("triple", {})[sw.get("field", "work")] = v
        out.append(c)
    return out


def _slope(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 2 or np.ptp(x[ok]) == 0:
        return None
    return float(np.polyfit(x[ok], y[ok], 1)[0])


SWEEP_COLUMNS = ["n", "p_high", "p_work", "p_low", "kappa", "tau", "floor",
                 "measured_rho", "predicted_chi", "predicted_rho_plus_delta"]


def cmd_sweep(cfg: dict, out: Path, threads: int) -> int:
    cfgs = sweep_configs(cfg)
    if threads > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_point, cfgs))
    else:
        rows = [_sweep_point(c) for c in cfgs]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow(["" if r[k] is None else repr(r[k]) for k in SWEEP_COLUMNS])
    _write(out, "table", buf.getvalue(), cfg)
    pos = [r for r in rows if r["floor"] > 0]
    lf = [math.log(r["floor"]) for r in pos]
    summary = {
        "points": rows,
        "slope_log_floor_vs_log_tau": _slope(
            [math.log(r["tau"]) for r in pos], lf),
        "slope_log_floor_vs_log_kappa": _slope(
            [math.log(r["kappa"]) for r in pos], lf),
    }
    _write(out, "report", _dumps(bd.json_safe(summary)), cfg)
    for r in rows:
        print(f"n={r['n']:6d} p={r['p_work']:2d} floor={r['floor']:.3e} "
              f"chi={r['predicted_chi'] or float('nan'):.3e}")
    print(f"slope(log floor, log tau) = {summary['slope_log_floor_vs_log_tau']}")
    if any(r["diverged"] for r in rows):
        print("error: a sweep point diverged", file=sys.stderr)
        return EXIT_MATH
    return EXIT_OK


def bounds_table(hier: Hierarchy, rep: bd.BoundReport, cfg: dict):
    """Rows ``(quantity, predicted, measured)``."""
    rows = []
    seed, n_rhs = cfg["seed"], cfg["n_rhs"]
    sub = bd.dense_capable(hier)
    if hier.ell >= 2 and rep.delta_rho_tg is not None:
        m = bd.measured_contraction(sub, tg_solver(sub), n_rhs, seed)
        rows.append(("tg_factor", rep.rho_star_tg + rep.delta_rho_tg, m))
    m = bd.measured_contraction(sub, v_cycle_solver(sub), n_rhs, seed)
    rows.append(("v_factor", None if rep.delta_rho_v is None
                 else rep.rho_star_v + rep.delta_rho_v, m))
    rows.append(("rho_star_v", rep.rho_star_v, None))
    fin = hier.finest
    _, srep = ir_solve(fin.A, fin.b, v_cycle_solver(hier), fin.precisions,
                       tol=np.finfo(float).tiny, max_iter=cfg["max_iter"])
    if rep.delta_rho_ir is not None:
        rows.append(("ir_factor", rep.rho_star_v + rep.delta_rho_ir,
                     srep.measured_rho))
    rows.append(("ir_floor", rep.chi, srep.floor))
    return rows


def cmd_bounds(cfg: dict, out: Path) -> int:
    hier = build_from_config(cfg)
    rep = bd.bound_report(hier, fmg_N=cfg.get("N"))
    rows = bounds_table(hier, rep, cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "predicted", "measured"])
    for q, p, m in rows:
        w.writerow([q, "" if p is None else repr(p),
                    "" if m is None else repr(m)])
    _write(out, "table", buf.getvalue(), cfg)
    _write(out, "bounds", _dumps(rep.to_dict()), cfg)
    print(f"{'quantity':<12} {'predicted':>12} {'measured':>12}")
    for q, p, m in rows:
        fp = "-" if p is None else f"{p:.4e}"
        fm = "-" if m is None else f"{m:.4e}"
        print(f"{q:<12} {fp:>12} {fm:>12}")
    for note in rep.notes:
        print(f"note: {note}")
    if hier.ell >= 2 and not hier.vartheta > 1:
        print(f"error: V-cycle bound hypothesis violated: precision ladder "
              f"violates vartheta > 1 (vartheta = {hier.vartheta:.4g})",
              file=sys.stderr)
        return EXIT_MATH
    return EXIT_OK


def cmd_fmg(cfg: dict, out: Path, trace: bool) -> int:
    hier = build_from_config(cfg)
    C = bd.measure_C(hier) if hier.ell >= 2 else math.inf
    q = hier.disc_q
    N = cfg.get("N")
    if N is None:
        if hier.ell >= 2:
            _, rho_v = bd.measure_rho_star(bd.dense_capable(hier))
            try:
                N = max(bd.n_min_estimate(t, q, rho_v)
                        for t in hier.theta.values())
            except bd.BoundError as exc:
                raise MathFailure(str(exc)) from exc
        else:
            N = cfg["max_iter"]
    tr = CycleTrace() if trace else None
    res = fmg(hier, N, trace=tr)
    rows = []
    for lev, rep in zip(hier.levels, res.reports):
        target = C * lev.h**q
        rows.append({"j": lev.j, "n": lev.n, "h": lev.h,
                     "rel_energy_error": rep.final_error,
                     "C_h_q": target if math.isfinite(target) else None,
                     "pass": bool(rep.final_error <= target)})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float)
                        else v) for k, v in r.items()})
    _write(out, "table", buf.getvalue(), cfg)
    _write(out, "report", _dumps(bd.json_safe(
        {"N": N, "C": C, "q": q, "v_cycles": res.v_cycles, "levels": rows})),
        cfg)
    if tr is not None:
        _write(out, "trace", tr.to_jsonl(), cfg)
    print(f"N={N} C={C:.4g} q={q}")
    print(f"{'j':>3} {'n':>6} {'h':>10} {'error':>11} {'C h^q':>11} pass")
    for r in rows:
        ch = "-" if r["C_h_q"] is None else f"{r['C_h_q']:.4e}"
        print(f"{r['j']:>3} {r['n']:>6} {r['h']:>10.4e} "
              f"{r['rel_energy_error']:>11.4e} {ch:>11} {r['pass']}")
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_MATH


def cmd_gen(cfg: dict, out: Path) -> int:
    hier = build_from_config(cfg)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for lev in hier.levels:
            write_matrix_market(out / f"A_{lev.j}.mtx", lev.A,
                                comment=f"level {lev.j} of {hier.ell}")
            write_vector(out / f"b_{lev.j}.txt", lev.b)
            if lev.P is not None:
                write_matrix_market(out / f"P_{lev.j}.mtx", lev.P,
                                    comment=f"interpolation to level {lev.j}")
    except OSError as exc:
        raise UsageError(f"cannot write matrices: {exc}") from exc
    _write(out, "report", _dumps(bd.json_safe(hier.summary())), cfg)
    print(f"wrote {hier.ell} level(s) to {out}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def _threads(arg) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("MPMG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"MPMG_THREADS must be an integer, got {env!r}")
    return 1


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mpmg", description="Mixed-precision multigrid experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [("solve", "iterative refinement solve"),
                        ("sweep", "parameter sweep of solves"),
                        ("bounds", "predicted vs measured bounds"),
                        ("fmg", "full multigrid accuracy table"),
                        ("gen", "dump hierarchy matrices")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=Path("."))
        p.add_argument("--trace", action="store_true",
                       help="write per-level cycle records (JSON lines)")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
    return ap


def main(argv=None) -> int:
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        threads = _threads(args.threads)
        if args.command == "solve":
            return cmd_solve(cfg, args.out, args.trace)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.out, threads)
        if args.command == "bounds":
            return cmd_bounds(cfg, args.out)
        if args.command == "fmg":
            return cmd_fmg(cfg, args.out, args.trace)
        return cmd_gen(cfg, args.out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MathFailure, bd.BoundError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MATH


if __name__ == "__main__":
    sys.exit(main())
