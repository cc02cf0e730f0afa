"""Command-line front end: scenario orchestration and artifact writing.

Usage::

    crflow run CONFIG.toml [--out DIR] [--check]
    crflow echo CONFIG.toml

Exit codes: 0 success, 1 config error, 2 solver failure, 3 geometric
degeneration halt, 4 verdict failure in check mode.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from crflow.config import FlowConfig, config_to_dict, echo_config, load_config
from crflow.diagnostics import (
    ROW_FIELDS, DiagnosticsReport, common_band_values, emit_report, fit_order,
)
from crflow.errors import (
    ConfigError, DegenerateMetricError, DegenerationHalt, GaugeBreakdownError,
    NearSingularOperatorError, NewtonDivergenceError, SolverError,
)
from crflow.flow import Mode, Trajectory, run_comparison, run_flow

log = logging.getLogger("crflow")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_HALT, EXIT_VERDICT = 0, 1, 2, 3, 4
LADDER_MIN_ORDER = 1.9
GAUGE_MIN_ORDER = 1.0


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _num(x) -> str:
    x = float(x)
    return format(x, ".17g") if math.isfinite(x) else "null"


def _array(values) -> str:
    return "[" + ", ".join(_num(v) for v in np.asarray(values, dtype=float)) + "]"


def snapshot_json(state) -> str:
    """Self-describing snapshot with 17 significant digits per number."""
    g, curv = state.metric, state.curv
    parts = [
        f'"t": {_num(state.t)}',
        f'"s_values": {_array(g.s)}',
        f'"a": {_array(g.a)}',
        f'"b": {_array(g.b)}',
        f'"p": {_array(state.pressure.p)}',
        f'"k_rad": {_array(curv.k_rad)}',
        f'"k_sph": {_array(curv.k_sph)}',
        f'"R": {_array(curv.scalar)}',
    ]
    return "{\n  " + ",\n  ".join(parts) + "\n}\n"


def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_trajectory(directory: Path, traj: Trajectory, report: DiagnosticsReport,
                     config: FlowConfig, extra: dict | None = None) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    fmts = config.output.formats
    if "json" in fmts:
        snap_dir = directory / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for i, st in enumerate(traj.snapshots):
            (snap_dir / f"snapshot_{i:05d}.json").write_text(snapshot_json(st), encoding="utf-8")
    if "csv" in fmts:
        write_csv(directory / "diagnostics.csv", ROW_FIELDS,
                  ([getattr(r, f) for f in ROW_FIELDS] for r in report.rows))
    summary = dict(report.summary)
    summary.update({"mode": traj.mode.value, "partial": report.partial,
                    "seed": config.seed, "config": config_to_dict(config)})
    if extra:
        summary.update(extra)
    write_json(directory / "summary.json", summary)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass
class ScenarioResult:
    exit_code: int
    out_dir: Path
    summary: dict = field(default_factory=dict)


def _report(traj: Trajectory, config: FlowConfig) -> DiagnosticsReport:
    d = config.diagnostics
    return emit_report(traj, alpha=d.alpha, drift_band=config.tolerances.drift_band,
                       k_tilde=d.k_tilde, band_width=config.tolerances.band_width,
                       window=d.decay_window)


def _single(config: FlowConfig, out: Path):
    """One run in ``out``; returns ``(exit_code, verdicts_ok, summary, result)``."""
    if config.mode is Mode.BOTH_COMPARE:
        res = run_comparison(config)
        reports = {}
        for name, traj in (("dcrf", res.dcrf), ("pulled_back", res.pulled), ("crf", res.crf)):
            reports[name] = _report(traj, config)
            write_trajectory(out / name, traj, reports[name], config)
        header = ("t", "R_discrepancy", "rm_sq_discrepancy", "phi_monotone", "gauge_agreement")
        tol = config.tolerances.drift_band
        rows = [(r["t"], r["R_discrepancy"], r["rm_sq_discrepancy"], r["phi_monotone"],
                 r["R_discrepancy"] <= tol and r["phi_monotone"]) for r in res.table]
        write_csv(out / "comparison.csv", header, rows)
        summary = {
            "mode": Mode.BOTH_COMPARE.value, "seed": config.seed,
            "max_R_discrepancy": res.max_scalar_discrepancy,
            "max_rm_sq_discrepancy": res.max_rm_discrepancy,
            "phi_monotone": res.phi_monotone,
            "runs": {k: v.summary for k, v in reports.items()},
            "config": config_to_dict(config),
        }
        write_json(out / "summary.json", summary)
        codes = [t.exit_code for t in (res.dcrf, res.crf)]
        code = max(codes)
        ok = res.phi_monotone and all(r.summary["all_pass"] for r in reports.values())
        return code, ok, summary, res
    traj = run_flow(config)
    report = _report(traj, config)
    write_trajectory(out, traj, report, config)
    return traj.exit_code, report.summary["all_pass"], report.summary, traj


def _ladder(config: FlowConfig, out: Path):
    ns = sorted(config.ladder.n_points)
    results, coarse_nodes, spacing, errors, gauge_errors = [], None, [], [], []
    code, all_ok = EXIT_OK, True
    for n in ns:
        member = config.with_points(n)
        c, ok, summary, res = _single(member, out / f"N{n}")
        code, all_ok = max(code, c), all_ok and ok
        traj = res.crf if member.mode is Mode.BOTH_COMPARE else res
        grid = traj.snapshots[0].metric.grid
        if coarse_nodes is None:
            coarse_nodes = grid.s_values[grid.trusted_mask(config.tolerances.band_width)]
        spacing.append(grid.spacing)
        errors.append(float(np.max(common_band_values(traj, coarse_nodes))))
        if member.mode is Mode.BOTH_COMPARE:
            gauge_errors.append(res.max_scalar_discrepancy)
        results.append({"n_points": n, "exit_code": c, "drift_common_band": errors[-1]})
    table = {"members": results}
    rows = [(n, h, e) for n, h, e in zip(ns, spacing, errors)]
    header = ["n_points", "ds", "drift_common_band"]
    if len(ns) >= 2 and all(e > 0 for e in errors):
        table["drift_order_fit"] = fit_order(spacing, errors)
        table["drift_order_pass"] = table["drift_order_fit"] >= LADDER_MIN_ORDER
        all_ok = all_ok and table["drift_order_pass"]
    if len(gauge_errors) >= 2 and all(e > 0 for e in gauge_errors):
        table["gauge_order_fit"] = fit_order(spacing, gauge_errors)
        table["gauge_order_pass"] = table["gauge_order_fit"] >= GAUGE_MIN_ORDER
        all_ok = all_ok and table["gauge_order_pass"]
        header.append("gauge_R_discrepancy")
        rows = [r + (g,) for r, g in zip(rows, gauge_errors)]
    write_csv(out / "convergence.csv", header, rows)
    table["config"] = config_to_dict(config)
    table["seed"] = config.seed
    write_json(out / "summary.json", table)
    return code, all_ok, table


def run_scenario(config: FlowConfig, out_dir=None, check: bool | None = None) -> ScenarioResult:
    """Run the configured scenario and write its artifacts; never raises on run failures."""
    out = Path(out_dir if out_dir is not None else config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(echo_config(config), encoding="utf-8")
    check = config.output.check if check is None else check
    try:
        if config.ladder.n_points:
            code, ok, summary = _ladder(config, out)
        else:
            code, ok, summary, _ = _single(config, out)
    except (NewtonDivergenceError, SolverError, NearSingularOperatorError) as exc:
        write_json(out / "failure.json", {"error": type(exc).__name__, "message": str(exc),
                                          "partial": True, "seed": config.seed})
        log.error("solver failure: %s", exc)
        return ScenarioResult(EXIT_SOLVER, out, {"error": str(exc)})
    except (DegenerateMetricError, DegenerationHalt, GaugeBreakdownError) as exc:
        write_json(out / "failure.json", {"error": type(exc).__name__, "message": str(exc),
                                          "partial": True, "seed": config.seed})
        log.error("degeneration halt: %s", exc)
        return ScenarioResult(EXIT_HALT, out, {"error": str(exc)})
    if code == EXIT_OK and check and not ok:
        code = EXIT_VERDICT
    return ScenarioResult(code, out, summary)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crflow", description="Conformal Ricci flow simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario described by a config file")
    run.add_argument("config", help="TOML config file")
    run.add_argument("--out", help="output directory (overrides output.directory)")
    run.add_argument("--check", action="store_true",
                     help="exit with status 4 when a verdict fails")
    echo = sub.add_parser("echo", help="print the fully resolved config")
    echo.add_argument("config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "echo":
        sys.stdout.write(echo_config(config))
        return EXIT_OK
    if args.check:
        config = replace(config, output=replace(config.output, check=True))
    result = run_scenario(config, args.out)
    summary = result.summary
    print(json.dumps(_clean({"exit_code": result.exit_code, "out_dir": str(result.out_dir),
                             "all_pass": summary.get("all_pass")}), sort_keys=True))
    return result.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
