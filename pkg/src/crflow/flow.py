"""Time stepping of the conformal Ricci flow and its DeTurck-gauged variant.

The evolved variables are the log-perturbations ``alpha = log a`` and
``beta = log(b / B)``.  For ``g = a^2 ds^2 + b^2 g_kappa`` the flow
``d/dt g = -2 (Rc - lam g) - 2 p g`` becomes, componentwise::

    d/dt alpha = -(ric_rad - lam + p),   d/dt beta = -(ric_tan - lam + p)

with ``lam = -m`` (AH) or ``2c`` (closed).  The gauged flow adds
``L_W h`` for the radial DeTurck field ``W``; the gauge diffeomorphism is
integrated together with the metric so that the ungauged solution can be
reconstructed by pull-back.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.interpolate import CubicSpline

from crflow.elliptic import (
    EllipticOperator, PressureField, assemble_operator, pressure_source, solve_pressure,
)
from crflow.errors import (
    CRFError, DegenerateMetricError, DegenerationHalt, GaugeBreakdownError, GridError,
    NearSingularOperatorError, SolverError,
)
from crflow.geometry.curvature import CurvatureBundle, compute_curvature, sectional_curvatures
from crflow.geometry.grid import POLE, Family, diff1, diff2, fill_poles_even
from crflow.geometry.metric import SymmetricMetric

log = logging.getLogger(__name__)


class Mode(str, Enum):
    CRF = "CRF"
    DCRF = "DCRF"
    BOTH_COMPARE = "BOTH_COMPARE"


@dataclass(frozen=True, eq=False)
class GaugeMap:
    phi: np.ndarray
    w_field: np.ndarray
    phi_inverse_cache: np.ndarray | None = None

    @classmethod
    def identity(cls, s: np.ndarray) -> "GaugeMap":
        return cls(np.array(s, dtype=float), np.zeros_like(s), np.array(s, dtype=float))

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.phi) > 0))

    def inverse(self, s: np.ndarray) -> np.ndarray:
        if self.phi_inverse_cache is not None and self.phi_inverse_cache.size == s.size:
            return self.phi_inverse_cache
        return np.interp(s, self.phi, s)


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    metric: SymmetricMetric
    pressure: PressureField
    curv: CurvatureBundle
    gauge: GaugeMap | None = None


@dataclass
class SolverContext:
    """Per-run solver settings shared by all steps.

    ``near_singular`` is fixed once from the initial spectral check of the
    closed pressure operator.
    """

    elliptic_tol: float = 1e-10
    near_singular: bool = False
    singular_ratio: float | None = None
    curvature_cap: float = 1e6
    gauge_dissipation: bool = True


@dataclass
class Trajectory:
    snapshots: list = field(default_factory=list)
    diagnostics_rows: list = field(default_factory=list)
    config_echo: object = None
    mode: Mode = Mode.CRF
    background: SymmetricMetric | None = None
    status: str = "complete"
    halt_reason: str | None = None
    exit_code: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([st.t for st in self.snapshots])

    @property
    def halted(self) -> bool:
        return self.status != "complete"


# ---------------------------------------------------------------------------
# state construction
# ---------------------------------------------------------------------------

def _operator(metric: SymmetricMetric, ctx: SolverContext) -> EllipticOperator:
    op = assemble_operator(metric, check_spectrum=False)
    if ctx.near_singular:
        # carry the run-level spectral verdict into every stage operator
        op = EllipticOperator(op.diag, op.sub, op.sup, op.bc_inner, op.bc_outer, op.shift,
                              op.sigma, op.log_weights, op.family, op.periodic,
                              ctx.singular_ratio, None)
    return op


def solve_state_pressure(metric: SymmetricMetric, curv: CurvatureBundle,
                         ctx: SolverContext) -> PressureField:
    src = pressure_source(curv, metric.family, metric.m, metric.c)
    return solve_pressure(_operator(metric, ctx), src, metric, tol=ctx.elliptic_tol)


def make_state(metric: SymmetricMetric, t: float = 0.0, ctx: SolverContext | None = None,
               gauge: GaugeMap | None = None) -> FlowState:
    """Coherent state: curvature and pressure consistent with ``metric``."""
    ctx = SolverContext() if ctx is None else ctx
    curv = compute_curvature(metric)
    pf = solve_state_pressure(metric, curv, ctx)
    return FlowState(float(t), metric, pf, curv, gauge)


def context_for(metric: SymmetricMetric, elliptic_tol: float = 1e-10) -> SolverContext:
    """Run context including the spectral check for closed geometries."""
    ctx = SolverContext(elliptic_tol=elliptic_tol)
    if metric.family is Family.CLOSED:
        op = assemble_operator(metric, check_spectrum=True)
        ctx.singular_ratio = op.singular_ratio
        ctx.near_singular = op.near_singular
    return ctx


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------

def _log_rates(metric: SymmetricMetric, curv: CurvatureBundle, p: np.ndarray):
    lam = metric.einstein_shift
    return -(curv.ric_rad - lam + p), -(curv.ric_tan - lam + p)


def crf_rhs(state: FlowState):
    """``(d/dt a^2, d/dt b^2)`` of the conformal Ricci flow."""
    g = state.metric
    dal, dbe = _log_rates(g, state.curv, state.pressure.p)
    return 2 * g.a ** 2 * dal, 2 * g.b ** 2 * dbe


def deturck_vector_field(g: SymmetricMetric, g0: SymmetricMetric) -> np.ndarray:
    """Radial component ``W^s = g0^{ij} (Gamma^s_ij(g) - Gamma^s_ij(g0))``.

    ``W^s = (1/a0^2)(a'/a - a0'/a0) - (m/b0^2)(b b'/a^2 - b0 b0'/a0^2)``,
    evaluated through the log-perturbations; zero at poles (odd field).
    """
    if not g.grid.same_as(g0.grid):
        raise GridError("DeTurck field needs both metrics on the same grid")
    grid = g.grid
    m = g.m
    da, db = diff1(g.alpha, grid), diff1(g.beta, grid)
    da0, db0 = diff1(g0.alpha, grid), diff1(g0.beta, grid)
    W = np.zeros(grid.n_points)
    mask = np.ones(grid.n_points, dtype=bool)
    mask[grid.pole_indices()] = False
    C = g.background.log_derivative(grid.s_values)[mask]
    e2q = np.exp(2 * (g.beta - g.alpha))[mask]
    e2q0 = np.exp(2 * (g0.beta - g0.alpha))[mask]
    tang = C * (e2q - e2q0) + e2q * db[mask] - e2q0 * db0[mask]
    W[mask] = (np.exp(-2 * g0.alpha[mask]) * (da[mask] - da0[mask])
               - m * np.exp(-2 * g0.beta[mask]) * tang)
    return W


def _lie_log_terms(g: SymmetricMetric, W: np.ndarray):
    """``(L_W h)_ss / (2 a^2)`` and ``(L_W h)_tan / (2 b^2)`` for radial ``W``."""
    grid = g.grid
    dW = diff1(W, grid, parity="odd")
    lie_a = W * diff1(g.alpha, grid) + dW
    mask = np.ones(grid.n_points, dtype=bool)
    mask[grid.pole_indices()] = False
    C = g.background.log_derivative(grid.s_values)
    lie_b = np.zeros(grid.n_points)
    lie_b[mask] = W[mask] * (C[mask] + diff1(g.beta, grid)[mask])
    for i in grid.pole_indices():
        lie_b[i] = dW[i]   # W b'/b -> W' at a pole
    return lie_a, lie_b


def lie_derivative_terms(g: SymmetricMetric, W: np.ndarray):
    """Reduced components of ``L_W g``: ``(W (a^2)' + 2 a^2 W', W (b^2)')``."""
    lie_a, lie_b = _lie_log_terms(g, W)
    return 2 * g.a ** 2 * lie_a, 2 * g.b ** 2 * lie_b


def dcrf_rhs(state: FlowState, g0: SymmetricMetric):
    """DeTurck-gauged velocity: ``crf_rhs + L_W h``."""
    va, vb = crf_rhs(state)
    W = deturck_vector_field(state.metric, g0)
    la, lb = lie_derivative_terms(state.metric, W)
    return va + la, vb + lb


# ---------------------------------------------------------------------------
# integrator
# ---------------------------------------------------------------------------

def filtered_reference(g: SymmetricMetric) -> SymmetricMetric:
    """Filtered copy of ``g`` used as the dissipation reference.

    ``alpha -> alpha + (ds^2/4) alpha''`` (binomial filter) and
    ``q -> q + (ds^2/4)(q'' - 2 C^2 q)`` for ``q = beta - alpha``, with
    ``C = B'/B``.  The extra ``-2 C^2 q`` term makes the correction vanish on
    the regular pole profile ``q ~ s^2`` while still damping the node next to
    the pole.  Smooth fields move by ``O(ds^2)`` uniformly; grid-scale
    oscillations are removed.
    """
    grid = g.grid
    w = 0.25 * grid.spacing ** 2
    alpha_ref = g.alpha + w * diff2(g.alpha, grid)
    q = g.beta - g.alpha
    corr = diff2(q, grid)
    mask = np.ones(q.size, dtype=bool)
    poles = grid.pole_indices()
    mask[poles] = False
    C = g.background.log_derivative(grid.s_values)
    corr[mask] -= 2 * C[mask] ** 2 * q[mask]
    corr[poles] = 0.0
    return g.with_fields(alpha_ref, alpha_ref + q + w * corr)


def gauge_dissipation_terms(g: SymmetricMetric):
    """Log-rate form of ``L_V g`` with ``V = W(g, filtered_reference(g))``.

    ``V = O(ds^2)`` on smooth metrics, so adding this term keeps the scheme a
    second-order discretization of the ungauged flow; on grid-scale gauge
    modes it acts with full DeTurck strength.
    """
    V = deturck_vector_field(g, filtered_reference(g))
    return _lie_log_terms(g, V)


def _stage(metric, mode, g0, ctx, phi):
    curv = compute_curvature(metric)
    if not np.all(np.isfinite(curv.norm_rm_sq)) or np.max(curv.norm_rm_sq) > ctx.curvature_cap ** 2:
        raise DegenerationHalt("curvature bound exceeded")
    pf = solve_state_pressure(metric, curv, ctx)
    dal, dbe = _log_rates(metric, curv, pf.p)
    dphi = None
    if mode is Mode.CRF and ctx.gauge_dissipation:
        la, lb = gauge_dissipation_terms(metric)
        dal = dal + la
        dbe = dbe + lb
    if mode is Mode.DCRF:
        W = deturck_vector_field(metric, g0)
        la, lb = _lie_log_terms(metric, W)
        dal = dal + la
        dbe = dbe + lb
        if phi is not None:
            # g = phi^* h solves CRF when d/dt phi = -W(phi)
            dphi = -np.interp(phi, metric.s, W)
    return dal, dbe, dphi, curv, pf


def step(state: FlowState, dt: float, mode=Mode.CRF, g0: SymmetricMetric | None = None,
         ctx: SolverContext | None = None) -> FlowState:
    """One classical RK4 step; the pressure is re-solved at every stage."""
    mode = Mode(mode)
    ctx = SolverContext() if ctx is None else ctx
    if mode is Mode.DCRF and g0 is None:
        raise GridError("DCRF stepping needs the background metric g0")
    g = state.metric
    phi0 = state.gauge.phi if (mode is Mode.DCRF and state.gauge is not None) else None
    al0, be0 = g.alpha, g.beta
    ks = []
    cur = g
    phi = phi0
    for c_stage in (0.0, 0.5, 0.5, 1.0):
        if ks:
            prev = ks[-1]
            cur = g.with_fields(al0 + c_stage * dt * prev[0], be0 + c_stage * dt * prev[1])
            if phi0 is not None:
                phi = phi0 + c_stage * dt * prev[2]
        ks.append(_stage(cur, mode, g0, ctx, phi)[:3])
    new_al = al0 + dt / 6 * (ks[0][0] + 2 * ks[1][0] + 2 * ks[2][0] + ks[3][0])
    new_be = be0 + dt / 6 * (ks[0][1] + 2 * ks[1][1] + 2 * ks[2][1] + ks[3][1])
    if not (np.all(np.isfinite(new_al)) and np.all(np.isfinite(new_be))):
        raise DegenerationHalt("metric coefficients became non-finite")
    new_metric = g.with_fields(new_al, new_be)
    gauge = None
    if mode is Mode.DCRF:
        W_new = deturck_vector_field(new_metric, g0)
        if phi0 is not None:
            new_phi = phi0 + dt / 6 * (ks[0][2] + 2 * ks[1][2] + 2 * ks[2][2] + ks[3][2])
            gauge = GaugeMap(new_phi, W_new)
            if not gauge.is_monotone():
                raise GaugeBreakdownError(f"gauge map lost monotonicity at t = {state.t + dt:.6g}")
        else:
            gauge = GaugeMap(g.s.copy(), W_new)
    try:
        new_state = make_state(new_metric, state.t + dt, ctx, gauge)
    except DegenerateMetricError as exc:
        raise DegenerationHalt(str(exc)) from exc
    if np.max(new_state.curv.norm_rm_sq) > ctx.curvature_cap ** 2:
        raise DegenerationHalt("curvature bound exceeded")
    return new_state


def cfl_timestep(metric: SymmetricMetric, sigma: float = 0.2) -> float:
    """``dt = sigma ds^2 min(a^2)``."""
    return float(sigma * metric.grid.spacing ** 2 * np.min(metric.a ** 2))


def snapshot_row(state: FlowState, trusted: np.ndarray) -> dict:
    curv = state.curv
    return {
        "t": state.t,
        "constraint_drift": float(np.max(np.abs(curv.scalar[trusted] - state.metric.scalar_target))),
        "rm_sup": float(np.max(curv.norm_rm[trusted])),
        "p_sup": float(np.max(np.abs(state.pressure.p[trusted]))),
    }


def plan_steps(t_end: float, dt_max: float, snapshot_interval: float | None = None):
    """Uniform step ``dt <= dt_max`` whose multiples hit every snapshot time.

    Returns ``(dt, n_steps, snapshot_every)``.  The snapshot interval is
    shrunk if needed so that it divides ``t_end``; times are then exact
    multiples of ``dt`` (up to one rounding).
    """
    if t_end <= 0 or dt_max <= 0:
        raise GridError("t_end and the time step must be positive")
    if snapshot_interval is None or snapshot_interval >= t_end:
        n = max(1, int(math.ceil(t_end / dt_max - 1e-9)))
        return t_end / n, n, n
    if snapshot_interval <= 0:
        raise GridError("snapshot_interval must be positive")
    n_int = int(math.ceil(t_end / snapshot_interval - 1e-9))
    interval = t_end / n_int
    per = max(1, int(math.ceil(interval / dt_max - 1e-9)))
    return interval / per, n_int * per, per


def integrate(initial: FlowState, t_end: float, dt: float, mode=Mode.CRF,
              g0: SymmetricMetric | None = None, ctx: SolverContext | None = None,
              snapshot_interval: float | None = None, band_width: float = 1.0) -> Trajectory:
    """Advance ``initial`` by ``t_end`` with a fixed step no larger than ``dt``.

    Snapshots are kept at multiples of ``snapshot_interval`` (only the final
    state when it is ``None``).  Degeneration or solver failures end the run
    early; the trajectory keeps every coherent snapshot and the reason.
    """
    mode = Mode(mode)
    ctx = SolverContext() if ctx is None else ctx
    dt, n_steps, every = plan_steps(t_end, dt, snapshot_interval)
    traj = Trajectory(mode=mode, background=g0)
    trusted = initial.metric.grid.trusted_mask(band_width)
    traj.snapshots.append(initial)
    traj.diagnostics_rows.append(snapshot_row(initial, trusted))
    state = initial
    for k in range(1, n_steps + 1):
        try:
            state = step(state, dt, mode, g0, ctx)
        except (DegenerationHalt, GaugeBreakdownError) as exc:
            traj.status, traj.halt_reason, traj.exit_code = "halted", f"{exc} at t = {state.t:.6g}", 3
            log.warning("flow halted: %s", traj.halt_reason)
            break
        except (SolverError, NearSingularOperatorError) as exc:
            traj.status, traj.halt_reason, traj.exit_code = "failed", f"{exc} at t = {state.t:.6g}", 2
            log.warning("pressure solve failed: %s", traj.halt_reason)
            break
        # exact step multiples keep snapshot times free of accumulated rounding
        state = FlowState(initial.t + k * dt, state.metric, state.pressure, state.curv, state.gauge)
        if k % every == 0 or k == n_steps:
            traj.snapshots.append(state)
            traj.diagnostics_rows.append(snapshot_row(state, trusted))
    return traj


# ---------------------------------------------------------------------------
# gauge reconstruction
# ---------------------------------------------------------------------------

def _integrate_phi(traj: Trajectory) -> list:
    """RK4 in t for d/dt phi = -W(phi, t), W linear in s and in t between snapshots."""
    s = traj.snapshots[0].metric.s
    times = traj.times
    Ws = [st.gauge.w_field if st.gauge is not None else np.zeros_like(s) for st in traj.snapshots]

    def W_at(t, x):
        k = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        th = (t - times[k]) / (times[k + 1] - times[k])
        return np.interp(x, s, (1 - th) * Ws[k] + th * Ws[k + 1])

    phis = [s.copy()]
    phi = s.copy()
    for k in range(len(times) - 1):
        t0, h = times[k], times[k + 1] - times[k]
        k1 = -W_at(t0, phi)
        k2 = -W_at(t0 + h / 2, phi + h / 2 * k1)
        k3 = -W_at(t0 + h / 2, phi + h / 2 * k2)
        k4 = -W_at(t0 + h, phi + h * k3)
        phi = phi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        phis.append(phi.copy())
    return phis


def radial_spline(f: np.ndarray, grid, parity: str = "even") -> CubicSpline:
    """Cubic spline of a radial field, mirrored across pole ends by ``parity``.

    Mirroring keeps the interpolant smooth through the pole, where a plain
    not-a-knot spline would spoil the ``O(s^2)`` structure curvature needs.
    """
    s = grid.s_values
    f = np.asarray(f, dtype=float)
    if grid.periodic:
        return CubicSpline(s, f, bc_type="periodic")
    sign = 1.0 if parity == "even" else -1.0
    xs, fs = s, f
    if grid.ends[0] == POLE:
        xs = np.concatenate([-s[:0:-1], xs])
        fs = np.concatenate([sign * f[:0:-1], fs])
    if grid.ends[1] == POLE:
        L = s[-1]
        xs = np.concatenate([xs, 2 * L - s[-2::-1]])
        fs = np.concatenate([fs, sign * f[-2::-1]])
    return CubicSpline(xs, fs)


def _odd_derivative4(f: np.ndarray, grid) -> np.ndarray:
    """Fourth-order first derivative of an odd field (odd ghosts at poles).

    ``log phi'`` enters ``q = beta - alpha`` of the pulled-back metric, which
    must be accurate to ``O(ds^2)`` relative to ``s^2`` next to a pole.
    """
    h = grid.spacing
    f = np.asarray(f, dtype=float)
    N = f.size
    if grid.periodic:
        core = f[:-1]
        L = grid.s_max
        # phi - s is periodic for a map of the circle
        u = core - grid.s_values[:-1]
        d = (8 * (np.roll(u, -1) - np.roll(u, 1)) - (np.roll(u, -2) - np.roll(u, 2))) / (12 * h) + 1.0
        return np.concatenate([d, d[:1]])
    lo = [-f[2] , -f[1]] if grid.ends[0] == POLE else None
    ext = np.concatenate([lo if lo is not None else [0.0, 0.0], f, [0.0, 0.0]])
    if grid.ends[1] == POLE:
        L = grid.s_max
        ext[-2:] = [2 * L - f[-2], 2 * L - f[-3]]
    d = (8 * (ext[3:-1] - ext[1:-3]) - (ext[4:] - ext[:-4])) / (12 * h)
    # one-sided fourth-order stencils where no ghost exists
    fwd = np.array([-25, 48, -36, 16, -3]) / (12 * h)
    if grid.ends[0] != POLE:
        d[0] = fwd @ f[:5]
        d[1] = np.array([-3, -10, 18, -6, 1]) / (12 * h) @ f[:5]
    if grid.ends[1] != POLE:
        d[-1] = -(fwd @ f[-1:-6:-1])
        d[-2] = -(np.array([-3, -10, 18, -6, 1]) / (12 * h) @ f[-1:-6:-1])
    return d


def pullback_metric(h: SymmetricMetric, phi: np.ndarray) -> SymmetricMetric:
    """``phi^* h``: ``a(s) = a_h(phi(s)) phi'(s)``, ``b(s) = b_h(phi(s))``.

    Metric coefficients are interpolated with pole-mirrored cubic splines
    (curvature needs two derivatives of the interpolant).
    """
    s = h.s
    grid = h.grid
    phi_c = np.clip(phi, s[0], s[-1])
    al = radial_spline(h.alpha, grid)(phi_c)
    be = radial_spline(h.beta, grid)(phi_c)
    dphi = _odd_derivative4(phi, grid)
    if np.any(dphi <= 0):
        raise GaugeBreakdownError("gauge map is not monotone")
    logratio = np.zeros_like(s)
    mask = np.ones(s.size, dtype=bool)
    mask[grid.pole_indices()] = False
    logratio[mask] = np.log(h.background.profile(phi_c[mask]) / h.background.profile(s[mask]))
    for i in grid.pole_indices():
        logratio[i] = np.log(dphi[i])   # B(phi)/B(s) -> phi' at a pole
    return h.with_fields(al + np.log(dphi), be + logratio)


def compose_scalar(field_h: np.ndarray, grid, phi: np.ndarray, parity: str = "even") -> np.ndarray:
    """Scalar invariants transform by composition: ``f(phi(s))``.

    ``parity`` selects the mirror rule at poles: frame derivatives of radial
    scalars (``dp``, ``d3p``) are odd there.
    """
    s = grid.s_values
    return radial_spline(field_h, grid, parity)(np.clip(phi, s[0], s[-1]))


_CURVATURE_SCALARS = ("k_rad", "k_sph", "ric_rad", "ric_tan", "scalar", "einstein_dev_rad",
                      "einstein_dev_tan", "norm_rm_sq", "norm_dev_sq", "grad_rm_norm")


def compose_state(st: FlowState, phi: np.ndarray, pulled: SymmetricMetric, ctx=None) -> FlowState:
    """State of ``phi^* h`` whose invariants are those of ``h`` composed with ``phi``.

    Only the metric coefficients are interpolated; curvature and pressure are
    carried over as scalars, which is exact in the continuum and avoids
    re-differentiating an interpolated metric next to the pole.
    """
    grid = st.metric.grid
    fields = {name: compose_scalar(getattr(st.curv, name), grid, phi) for name in _CURVATURE_SCALARS}
    fields["norm_rm_sq"] = np.maximum(fields["norm_rm_sq"], 0.0)
    fields["norm_dev_sq"] = np.maximum(fields["norm_dev_sq"], 0.0)
    fields["grad_rm_norm"] = np.maximum(fields["grad_rm_norm"], 0.0)
    _, _, h = sectional_curvatures(pulled)
    curv = CurvatureBundle(h=h, m=st.curv.m, **fields)
    pf = st.pressure
    pressure = PressureField(
        compose_scalar(pf.p, grid, phi), compose_scalar(pf.dp, grid, phi, "odd"),
        compose_scalar(pf.d2p, grid, phi), compose_scalar(pf.d3p, grid, phi, "odd"),
        pf.solve_residual, pf.forced_zero)
    w = st.gauge.w_field if st.gauge is not None else np.zeros_like(phi)
    return FlowState(st.t, pulled, pressure, curv, GaugeMap(np.array(phi, dtype=float), w))


def gauge_pullback(traj_dcrf: Trajectory, g0: SymmetricMetric | None = None,
                   band_width: float = 1.0) -> Trajectory:
    """Reconstruct the CRF trajectory ``g(t) = phi(t)^* h(t)`` from a DCRF run.

    Uses the gauge maps integrated alongside the run when present, otherwise
    integrates ``phi`` from the stored W snapshots.  Nodes whose image lies
    beyond ``s_max`` are clamped (and are outside the trusted band).
    """
    if traj_dcrf.mode is not Mode.DCRF:
        raise GridError("gauge pull-back needs a DCRF trajectory")
    snaps = traj_dcrf.snapshots
    have_phi = all(st.gauge is not None for st in snaps)
    phis = [st.gauge.phi for st in snaps] if have_phi else _integrate_phi(traj_dcrf)
    out = Trajectory(mode=Mode.CRF, background=g0 or traj_dcrf.background,
                     config_echo=traj_dcrf.config_echo, status=traj_dcrf.status,
                     halt_reason=traj_dcrf.halt_reason, exit_code=traj_dcrf.exit_code)
    s = snaps[0].metric.s
    trusted = snaps[0].metric.grid.trusted_mask(band_width)
    for st, phi in zip(snaps, phis):
        if not np.all(np.diff(phi) > 0):
            raise GaugeBreakdownError(f"gauge map not monotone at t = {st.t:.6g}")
        if np.max(phi) > s[-1] + 1e-12:
            log.warning("pull-back clamps phi beyond s_max at t = %.6g", st.t)
        try:
            pulled = pullback_metric(st.metric, phi)
        except CRFError as exc:
            raise GaugeBreakdownError(f"pulled-back metric unusable at t = {st.t:.6g}: {exc}") from exc
        new = compose_state(st, phi, pulled)
        out.snapshots.append(new)
        out.diagnostics_rows.append(snapshot_row(new, trusted))
    return out


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def prepare_initial(config):
    """``(initial metric, model background g0)`` described by ``config``.

    The perturbation is seeded; AH data is conformally normalized when
    ``config.normalize`` is set.
    """
    from crflow.geometry.conformal import conformal_normalize
    from crflow.geometry.metric import build_background, perturbed
    from crflow.geometry.profiles import perturbation_fields

    gc = config.grid
    if Family(config.family) is Family.AH_BALL:
        params = {"s_max": gc.s_max, "n_points": gc.n_points}
    else:
        params = {"n_points": gc.n_points}
        if gc.L is not None:
            params["L"] = gc.L
    g0 = build_background(config.family, config.m, c=config.c, kappa=config.kappa,
                          radius=gc.radius, **params)
    pc = config.perturbation
    da, db = perturbation_fields(g0, pc.amplitude, pc.profile, pc.decay, pc.seed)
    g = perturbed(g0, da, db)
    if config.normalize:
        g = conformal_normalize(g, tol=config.tolerances.newton)
    return g, g0


def initial_state(g: SymmetricMetric, g0: SymmetricMetric, mode, ctx: SolverContext) -> FlowState:
    gauge = None
    if Mode(mode) is Mode.DCRF:
        gauge = GaugeMap(np.array(g.s, dtype=float), deturck_vector_field(g, g0))
    return make_state(g, 0.0, ctx, gauge)


def run_flow(config, mode=None) -> Trajectory:
    """Single CRF or DCRF run described by ``config``."""
    mode = Mode(mode or config.mode)
    if mode is Mode.BOTH_COMPARE:
        raise GridError("BOTH_COMPARE runs go through run_comparison")
    g, g0 = prepare_initial(config)
    ctx = context_for(g, config.tolerances.elliptic)
    state = initial_state(g, g0, mode, ctx)
    dt = cfl_timestep(g, config.time.cfl_sigma)
    traj = integrate(state, config.time.t_end, dt, mode, g0, ctx,
                     config.time.snapshot_interval, config.tolerances.band_width)
    traj.config_echo = config
    return traj


@dataclass
class ComparisonResult:
    dcrf: Trajectory
    pulled: Trajectory
    crf: Trajectory
    table: list

    @property
    def max_scalar_discrepancy(self) -> float:
        return max(row["R_discrepancy"] for row in self.table)

    @property
    def max_rm_discrepancy(self) -> float:
        return max(row["rm_sq_discrepancy"] for row in self.table)

    @property
    def phi_monotone(self) -> bool:
        return all(row["phi_monotone"] for row in self.table)


def compare_trajectories(pulled: Trajectory, crf: Trajectory, band_width: float = 1.0) -> list:
    """Per-snapshot sup discrepancies of ``R`` and ``|Rm|^2`` on the trusted band."""
    mask = crf.snapshots[0].metric.grid.trusted_mask(band_width)
    rows = []
    for a, b in zip(pulled.snapshots, crf.snapshots):
        if abs(a.t - b.t) > 1e-12 * max(1.0, abs(b.t)):
            raise GridError(f"snapshot times differ: {a.t} vs {b.t}")
        rows.append({
            "t": b.t,
            "R_discrepancy": float(np.max(np.abs(a.curv.scalar - b.curv.scalar)[mask])),
            "rm_sq_discrepancy": float(np.max(np.abs(a.curv.norm_rm_sq - b.curv.norm_rm_sq)[mask])),
            "phi_monotone": bool(a.gauge is None or a.gauge.is_monotone()),
        })
    return rows


def run_comparison(config) -> ComparisonResult:
    """DCRF run, its pull-back, and a direct CRF run from identical data."""
    dcrf = run_flow(config, Mode.DCRF)
    pulled = gauge_pullback(dcrf, dcrf.background, config.tolerances.band_width)
    crf = run_flow(config, Mode.CRF)
    n = min(len(pulled.snapshots), len(crf.snapshots))
    pulled.snapshots, crf_cut = pulled.snapshots[:n], Trajectory(crf.snapshots[:n])
    table = compare_trajectories(pulled, crf_cut, config.tolerances.band_width)
    return ComparisonResult(dcrf, pulled, crf, table)
