"""Monitored quantities along trajectories and the structured run report.

Every supremum is taken over the trusted band of the grid (poles and the AH
truncation layer excluded).  Reports are pure functions of the trajectory,
so repeated emission is bit-identical.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from crflow.errors import CRFError, GridError
from crflow.flow import Mode, Trajectory
from crflow.geometry.asymptotics import decay_rate_fit, default_window
from crflow.geometry.curvature import grad2_rm_norm, hessian_norm, laplacian_nodal
from crflow.geometry.grid import Family, diff1


@dataclass(frozen=True)
class DiagnosticsRow:
    t: float
    drift: float
    rm_sup: float
    grad_rm_sup: float
    shi_1: float
    shi_2: float
    p_sup: float
    dp_sup: float
    d2p_sup: float
    d3p_sup: float
    decay_mu_u: float
    decay_mu_p: float


ROW_FIELDS = tuple(f.name for f in fields(DiagnosticsRow))


@dataclass(frozen=True)
class HypothesisVerdict:
    K_observed: float
    K_tilde_observed: float
    t_end: float
    t_star_bound: float
    in_regime: bool
    reason: str


@dataclass
class DiagnosticsReport:
    rows: list
    summary: dict = field(default_factory=dict)
    partial: bool = False
    halt_reason: str | None = None


def _trusted(traj: Trajectory, band_width: float):
    return traj.snapshots[0].metric.grid.trusted_mask(band_width)


def constraint_drift(traj: Trajectory, band_width: float = 1.0) -> np.ndarray:
    """``sup |R - scalar_target|`` over the trusted band, per snapshot."""
    mask = _trusted(traj, band_width)
    return np.array([
        float(np.max(np.abs(st.curv.scalar[mask] - st.metric.scalar_target)))
        for st in traj.snapshots
    ])


def _grad2_sup(st, mask) -> float:
    return float(np.max(grad2_rm_norm(st.metric, st.curv)[mask]))


def shi_quantity(traj: Trajectory, k: int, band_width: float = 1.0) -> np.ndarray:
    """``t^{k/2} sup |grad^k Rm|`` per snapshot (k = 1 or 2)."""
    if k not in (1, 2):
        raise GridError(f"Shi quantity supported for k in {{1, 2}}, got {k}")
    mask = _trusted(traj, band_width)
    out = []
    for st in traj.snapshots:
        if k == 1:
            sup = float(np.max(st.curv.grad_rm_norm[mask]))
        else:
            sup = _grad2_sup(st, mask)
        out.append(st.t ** (k / 2) * sup)
    return np.array(out)


def observed_bounds(traj: Trajectory, band_width: float = 1.0):
    """``(K, K_tilde)``: max over snapshots of ``sup|Rm|`` and of the pressure suprema."""
    mask = _trusted(traj, band_width)
    K = max(float(np.max(st.curv.norm_rm[mask])) for st in traj.snapshots)
    Kt = max(
        max(float(np.max(np.abs(getattr(st.pressure, name)[mask])))
            for name in ("p", "dp", "d2p", "d3p"))
        for st in traj.snapshots)
    return K, Kt


def hypothesis_check(traj: Trajectory, alpha: float, band_width: float = 1.0) -> HypothesisVerdict:
    """Is the run inside the regime ``|Rm| <= K``, ``T <= alpha / K``?"""
    K, Kt = observed_bounds(traj, band_width)
    t_end = float(traj.snapshots[-1].t)
    bound = alpha / K if K > 0 else math.inf
    if traj.halted:
        reason = traj.halt_reason or "run halted"
        if "curvature" in reason:
            reason = f"curvature bound exceeded at t = {t_end:.6g}"
        return HypothesisVerdict(K, Kt, t_end, bound, False, reason)
    ok = t_end <= bound * (1 + 1e-12)
    reason = "inside hypothesis regime" if ok else f"T = {t_end:.6g} exceeds alpha/K = {bound:.6g}"
    return HypothesisVerdict(K, Kt, t_end, bound, bool(ok), reason)


def _c_constant(metric) -> float:
    # the AH deviation Rc + m g plays the role of Rc - 2c g with 2c = -m
    return float(metric.c) if metric.family is Family.CLOSED else -0.5 * metric.m


def evolution_residual(traj: Trajectory, band_width: float = 1.0) -> np.ndarray:
    """Violation ``max(0, LHS - RHS)`` of the ``|Rm|^2`` evolution inequality.

    LHS ``(d_t - Delta)|Rm|^2`` uses centered time differences (second-order
    one-sided at the ends) on uniformly spaced snapshots.  For gauged (DCRF)
    trajectories the time derivative is corrected to the ungauged flow by
    ``-W d_s f``.  RHS: ``-2|grad Rm|^2 + 16|Rm|^3 + 4(|p| + 2|c|)|Rm|^2
    + 8|Rm||Hess p|``.
    """
    snaps = traj.snapshots
    if len(snaps) < 3:
        raise GridError("evolution_residual needs at least 3 snapshots")
    times = traj.times
    dts = np.diff(times)
    if np.max(np.abs(dts - dts[0])) > 1e-9 * max(abs(dts[0]), 1e-300):
        raise GridError("evolution_residual needs uniformly spaced snapshots")
    dt = dts[0]
    f = [st.curv.norm_rm_sq for st in snaps]
    mask = _trusted(traj, band_width)
    out = []
    n = len(snaps)
    for i, st in enumerate(snaps):
        if i == 0:
            ft = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * dt)
        elif i == n - 1:
            ft = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * dt)
        else:
            ft = (f[i + 1] - f[i - 1]) / (2 * dt)
        g = st.metric
        if traj.mode is Mode.DCRF and st.gauge is not None:
            ft = ft - st.gauge.w_field * diff1(f[i], g.grid)
        h = st.curv.h
        lhs = ft - laplacian_nodal(f[i], g, h)
        rm = st.curv.norm_rm
        c = _c_constant(g)
        rhs = (-2 * st.curv.grad_rm_norm ** 2 + 16 * rm ** 3
               + 4 * (np.abs(st.pressure.p) + 2 * abs(c)) * rm ** 2
               + 8 * rm * hessian_norm(st.pressure.p, g, h))
        out.append(float(np.max(np.maximum(lhs - rhs, 0.0)[mask])))
    return np.array(out)


def _safe_fit(field, grid, window) -> float:
    try:
        return decay_rate_fit(field, grid, window)
    except CRFError:
        return float("nan")


def decay_exponents(st, window=None, band_width: float = 1.0):
    """``(mu_u, mu_p)``: decay fits of ``|g - g0|_{g0}`` and ``p`` (AH only, else NaN)."""
    g = st.metric
    if g.family is not Family.AH_BALL:
        return float("nan"), float("nan")
    window = default_window(g.grid, band_width) if window is None else window
    u = np.sqrt(np.expm1(2 * g.alpha) ** 2 + g.m * np.expm1(2 * g.beta) ** 2)
    return _safe_fit(u, g.grid, window), _safe_fit(st.pressure.p, g.grid, window)


def diagnostics_rows(traj: Trajectory, band_width: float = 1.0, window=None) -> list:
    mask = _trusted(traj, band_width)
    rows = []
    for st in traj.snapshots:
        curv, pf = st.curv, st.pressure
        grad_sup = float(np.max(curv.grad_rm_norm[mask]))
        mu_u, mu_p = decay_exponents(st, window, band_width)
        rows.append(DiagnosticsRow(
            t=float(st.t),
            drift=float(np.max(np.abs(curv.scalar[mask] - st.metric.scalar_target))),
            rm_sup=float(np.max(curv.norm_rm[mask])),
            grad_rm_sup=grad_sup,
            shi_1=math.sqrt(st.t) * grad_sup,
            shi_2=st.t * _grad2_sup(st, mask),
            p_sup=float(np.max(np.abs(pf.p[mask]))),
            dp_sup=float(np.max(np.abs(pf.dp[mask]))),
            d2p_sup=float(np.max(np.abs(pf.d2p[mask]))),
            d3p_sup=float(np.max(np.abs(pf.d3p[mask]))),
            decay_mu_u=mu_u,
            decay_mu_p=mu_p,
        ))
    return rows


def emit_report(traj: Trajectory, alpha: float = 0.1, drift_band: float = 1e-4,
                k_tilde: float | None = None, band_width: float = 1.0,
                window=None, residual_tol: float = 1e-10) -> DiagnosticsReport:
    """Rows plus summary verdicts; deterministic in the trajectory."""
    if not traj.snapshots:
        raise GridError("cannot report on an empty trajectory")
    rows = diagnostics_rows(traj, band_width, window)
    hyp = hypothesis_check(traj, alpha, band_width)
    K = hyp.K_observed
    shi1 = [r.shi_1 / K if K > 0 else 0.0 for r in rows]
    band = max(r.drift for r in rows)
    # gating verdicts; the hypothesis regime is recorded but informational
    verdicts = {
        "constraint": bool(band <= drift_band),
        "complete": not traj.halted,
    }
    if k_tilde is not None:
        verdicts["pressure_bounds"] = bool(hyp.K_tilde_observed <= k_tilde)
    residual_max = None
    if len(traj.snapshots) >= 3:
        try:
            residual_max = float(np.max(evolution_residual(traj, band_width)))
            verdicts["evolution_inequality"] = bool(residual_max <= residual_tol)
        except GridError:
            residual_max = None
    summary = {
        "K_observed": K,
        "K_tilde_observed": hyp.K_tilde_observed,
        "alpha": alpha,
        "t_star_bound": hyp.t_star_bound,
        "hypothesis_regime": hyp.in_regime,
        "hypothesis_reason": hyp.reason,
        "shi_constants": {"1": max(shi1), "2": max(r.shi_2 for r in rows)},
        "constraint_band": band,
        "evolution_residual_max": residual_max,
        "verdicts": verdicts,
        "all_pass": all(verdicts.values()),
        "status": traj.status,
        "halt_reason": traj.halt_reason,
        "n_snapshots": len(rows),
    }
    return DiagnosticsReport(rows, summary, traj.halted, traj.halt_reason)


def common_band_values(traj: Trajectory, s_nodes: np.ndarray, snapshot: int = -1) -> np.ndarray:
    """``|R - target|`` of one snapshot at the physical radii ``s_nodes``.

    Ladder members share the coarsest grid's nodes, so comparing drift there
    measures the same points on every grid.
    """
    st = traj.snapshots[snapshot]
    grid = st.metric.grid
    idx = np.rint(np.asarray(s_nodes) / grid.spacing).astype(int)
    if np.max(np.abs(grid.s_values[idx] - s_nodes)) > 1e-9:
        raise GridError("ladder grids do not nest: coarse nodes missing on a finer grid")
    return np.abs(st.curv.scalar[idx] - st.metric.scalar_target)


def fit_order(spacings, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(spacing)``."""
    h = np.asarray(spacings, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.size < 2 or np.any(e <= 0):
        raise GridError("order fit needs at least two positive errors")
    slope, _ = np.polyfit(np.log(h), np.log(e), 1)
    return float(slope)


def report_rows_as_dicts(report: DiagnosticsReport) -> list:
    return [asdict(r) for r in report.rows]


__all__ = [
    "DiagnosticsRow", "ROW_FIELDS", "DiagnosticsReport", "HypothesisVerdict", "constraint_drift",
    "shi_quantity", "hypothesis_check", "observed_bounds", "evolution_residual",
    "decay_exponents", "diagnostics_rows", "emit_report", "common_band_values", "fit_order",
]
