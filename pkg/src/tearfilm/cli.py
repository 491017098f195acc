"""Command-line runner: ``tearfilm <mode> --config FILE [--out DIR] [--threads K]``."""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .analysis import (
    InsufficientDataError,
    check_maximum_principle,
    classify_regime,
    fit_thinning_rate,
    solve_bound_fixed_point,
)
from .config import MODES, PROFILE_HEADER, ConfigError, load_config
from .equilibrium import (
    ContinuationSettings,
    EquilibriumProblem,
    continue_branch,
    find_critical_parameter,
    get_parameter,
    set_parameter,
    solve_equilibrium,
)
from .integrator import SERIES_COLUMNS, EventKind, integrate
from .model import compute_salt_mass

BRANCH_COLUMNS = ("parameter", "min_h_eq", "argmin_x", "max_s_eq")
REGIME_COLUMNS = ("parameter", "value", "regime", "event", "t_stop", "h_min_final",
                  "exponent", "predicted", "error")


def fmt(value):
    """17 significant digits: float -> text -> float is lossless."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------


def write_profile_csv(path, state, params):
    sbar = params.sbar.values(state.mesh, params.domain_length)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_HEADER)
        for row in zip(state.mesh, state.h, state.s, sbar):
            w.writerow([fmt(v) for v in row])


def write_series_csv(path, series):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for i in range(len(series["t"])):
            w.writerow([fmt(series[c][i]) for c in SERIES_COLUMNS])


def write_table(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def read_series_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ConfigError(f"{path}: empty series", "fit.series")
    for col in ("t", "h_min"):
        if col not in rows[0]:
            raise ConfigError(f"{path}: missing column {col!r}", "fit.series")
    return (np.array([float(r["t"]) for r in rows]), np.array([float(r["h_min"]) for r in rows]))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def versions():
    return {"tearfilm": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "pyyaml": yaml.__version__}


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------


def _event_dict(event):
    return {"kind": event.kind.value, "t_stop": event.t_stop, "x_c": event.x_c, "detail": event.detail}


def _fit_dict(fit):
    if fit is None:
        return None
    d = asdict(fit)
    d["relative_error"] = fit.relative_error if fit.fitted else float("nan")
    return d


def _simulate(cfg, params, t_end):
    initial = cfg.initial_state()
    num = cfg.numerics
    return integrate(initial, params, num.make_controller(), num.mesh, t_end,
                     output_times=cfg.output.snapshot_times, rupture_floor=num.rupture_floor,
                     steady_tol=num.steady_tol, max_steps=num.max_steps)


def _thinning_fit(result, m, eta):
    if result.event.kind == EventKind.RUPTURE or m <= 1:
        return None
    try:
        return fit_thinning_rate(result.series["t"], result.series["h_min"], m, eta)
    except InsufficientDataError:
        return None


def _eta_default(cfg):
    return cfg.fit.eta if cfg.fit.eta is not None else 1.0


def run_simulate(cfg, out):
    params = cfg.params
    result = _simulate(cfg, params, cfg.numerics.t_end)
    write_series_csv(out / "series.csv", result.series)
    if cfg.output.profiles and cfg.output.snapshot_times:
        for i, snap in enumerate(result.snapshots):
            write_profile_csv(out / f"profile_{i:04d}.csv", snap, params)
        write_profile_csv(out / "profile_final.csv", result.final.to_solution(), params)
    fit = _thinning_fit(result, params.m, _eta_default(cfg))
    q = np.asarray(result.series["Q"])
    return {
        "event": _event_dict(result.event),
        "bound_report": asdict(check_maximum_principle(result, params)),
        "fit": _fit_dict(fit),
        "salt_drift": float(np.max(np.abs(q - q[0])) / q[0]),
        "steps": len(result.series["t"]),
        "snapshot_times": [s.time for s in result.snapshots],
    }


def _q0(cfg):
    if cfg.equilibrium.Q0 is not None:
        return cfg.equilibrium.Q0
    return float(compute_salt_mass(cfg.initial_state()))


def _settings(cfg):
    ec = cfg.equilibrium
    return ContinuationSettings(ds=ec.ds, ds_min=ec.ds_min, ds_max=ec.ds_max,
                                h_fold_floor=ec.h_fold_floor, couple_n=ec.couple_n)


def _seed(cfg, params, Q0):
    """Equilibrium guess for ``params``: none, or the end of the lead-in branch."""
    lead = cfg.equilibrium.lead_in
    if lead is None:
        return None
    target = get_parameter(params, lead.parameter)
    if target == lead.start:
        return None
    couple = cfg.equilibrium.couple_n
    start = set_parameter(params, lead.parameter, lead.start, couple)
    problem = EquilibriumProblem.uniform(start, Q0, cfg.numerics.n_nodes)
    branch = continue_branch(problem, lead.parameter, lead.start, target, settings=_settings(cfg))
    if branch.termination != "range_end":
        raise RuntimeError(f"lead-in continuation stopped early ({branch.termination}) "
                           f"at {lead.parameter} = {branch.parameters[-1]:.6g}")
    return branch.points[-1].solution.to_solution()


def run_equilibrium(cfg, out):
    params = cfg.params
    problem = EquilibriumProblem.uniform(params, _q0(cfg), cfg.numerics.n_nodes)
    eq = solve_equilibrium(problem, _seed(cfg, params, problem.Q0))
    sol = eq.to_solution()
    k = int(np.argmin(sol.h))
    write_table(out / "branch.csv", BRANCH_COLUMNS,
                [(float("nan"), sol.h[k], sol.mesh[k], float(np.max(sol.s)))])
    write_profile_csv(out / "equilibrium.csv", sol, params)
    return {"Q0": problem.Q0, "mu": eq.mu, "iterations": eq.iterations, "residual": eq.residual,
            "min_h_eq": float(sol.h[k]), "max_s_eq": float(np.max(sol.s))}


def run_continue(cfg, out):
    ec = cfg.equilibrium
    params = set_parameter(cfg.params, ec.parameter, ec.start, ec.couple_n)
    problem = EquilibriumProblem.uniform(params, _q0(cfg), cfg.numerics.n_nodes)
    branch = continue_branch(problem, ec.parameter, ec.start, ec.stop,
                             initial=_seed(cfg, params, problem.Q0),
                             settings=_settings(cfg))
    write_table(out / "branch.csv", BRANCH_COLUMNS, branch.rows())
    if cfg.output.profiles:
        last = branch.points[-1]
        write_profile_csv(out / "branch_end.csv", last.solution.to_solution(),
                          set_parameter(params, ec.parameter, last.parameter, ec.couple_n))
    crit = find_critical_parameter(branch, ec.threshold)
    return {"Q0": problem.Q0, "termination": branch.termination, "n_points": len(branch.points),
            "critical": asdict(crit)}


def _sweep_one(cfg, index, value):
    """One sweep member; returns plain data so it can cross process boundaries."""
    sw = cfg.sweep
    params = set_parameter(cfg.params, sw.parameter, value, sw.couple_n)
    eta = sw.horizon.eta if sw.horizon.eta is not None else _eta_default(cfg)
    t_end = sw.horizon.t_end(params.m, eta)
    row = {"index": index, "value": value, "t_end": t_end}
    try:
        result = _simulate(cfg, params, t_end)
        fit = _thinning_fit(result, params.m, eta)
        eq = None
        if sw.classify and result.event.kind != EventKind.RUPTURE:
            problem = EquilibriumProblem(params, float(compute_salt_mass(cfg.initial_state())),
                                         result.final.mesh)
            try:
                eq = solve_equilibrium(problem, result.final.to_solution())
            except Exception as exc:  # no equilibrium nearby is itself evidence
                row["equilibrium_error"] = str(exc)
        label = classify_regime(result, params, eq, fit)
        row.update(regime=label.value, evidence=_jsonable(label.evidence),
                   event=_event_dict(result.event), fit=_fit_dict(fit),
                   h_min_final=float(result.series["h_min"][-1]), series=result.series)
    except Exception as exc:
        row.update(regime="Failed", error=f"{type(exc).__name__}: {exc}")
    return row


def run_sweep(cfg, out, threads):
    values = cfg.sweep.values
    if threads <= 1:
        rows = [_sweep_one(cfg, i, v) for i, v in enumerate(values)]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_sweep_one, cfg, i, v) for i, v in enumerate(values)]
            rows = [f.result() for f in futures]
    table = []
    for row in rows:
        if "series" in row:
            write_series_csv(out / f"series_{row['index']:03d}.csv", row.pop("series"))
        fit = row.get("fit") or {}
        event = row.get("event") or {}
        table.append((cfg.sweep.parameter, row["value"], row["regime"], event.get("kind", ""),
                      event.get("t_stop", float("nan")), row.get("h_min_final", float("nan")),
                      fit.get("exponent", float("nan")), fit.get("predicted", float("nan")),
                      row.get("error", "")))
    write_table(out / "regimes.csv", REGIME_COLUMNS, table)
    return {"runs": rows, "failures": sum(r["regime"] == "Failed" for r in rows)}


def run_fit(cfg, out):
    path = Path(cfg.base_dir) / cfg.fit.series
    t, h = read_series_csv(path)
    m = cfg.fit.m if cfg.fit.m is not None else cfg.params.m
    fit = fit_thinning_rate(t, h, m, _eta_default(cfg))
    return {"fit": _fit_dict(fit)}


def run_check_bound(cfg, out):
    b = cfg.bound
    H = solve_bound_fixed_point(b.A, b.C, b.tau)
    return {"H": H, "g(H)": H - math.sqrt(b.A + b.C * H**b.tau) - b.C - 1.0}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def run_experiment(cfg, out_dir=None, threads=None):
    """Execute ``cfg`` and write artifacts; returns the manifest dict."""
    out = Path(out_dir if out_dir is not None else cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    threads = threads if threads is not None else (os.cpu_count() or 1)
    start = time.perf_counter()
    manifest = {"mode": cfg.mode, "effective_config": cfg.effective(), "versions": versions()}
    try:
        if cfg.mode == "simulate":
            manifest.update(run_simulate(cfg, out))
        elif cfg.mode == "equilibrium":
            manifest.update(run_equilibrium(cfg, out))
        elif cfg.mode == "continue":
            manifest.update(run_continue(cfg, out))
        elif cfg.mode == "sweep":
            manifest["threads"] = threads
            manifest.update(run_sweep(cfg, out, threads))
        elif cfg.mode == "fit-thinning":
            manifest.update(run_fit(cfg, out))
        else:
            manifest.update(run_check_bound(cfg, out))
        manifest["status"] = "ok"
    except Exception as exc:
        manifest["status"] = "error"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
    manifest["wall_time"] = time.perf_counter() - start
    with open(out / "manifest.json", "w") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def build_parser():
    ap = argparse.ArgumentParser(prog="tearfilm", description=__doc__)
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", required=True, help="YAML experiment file")
    ap.add_argument("--out", help="output directory (overrides output.directory)")
    ap.add_argument("--threads", type=int, help="sweep worker count (default: CPU count)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"tearfilm: config error: {exc}", file=sys.stderr)
        return 2
    if cfg.mode != args.mode:
        cfg = replace(cfg, mode=args.mode)
    if args.threads is not None and args.threads < 1:
        print("tearfilm: --threads must be >= 1", file=sys.stderr)
        return 2
    manifest = run_experiment(cfg, args.out, args.threads)
    print(yaml.safe_dump(_jsonable(manifest["effective_config"]), sort_keys=False), end="")
    if manifest["status"] != "ok":
        print(f"tearfilm: {manifest['error']}", file=sys.stderr)
        return 1
    if cfg.mode == "sweep":
        print(f"{'value':>8}  regime")
        for row in manifest["runs"]:
            print(f"{row['value']:>8g}  {row['regime']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
