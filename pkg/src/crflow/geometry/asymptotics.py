"""Far-field quantities of AH metrics: weighted norms, decay fits, T-tensor.

With ``x = e^{-s}`` the compactified metric is
``gbar = x^2 g = a^2 dx^2 + G(x) ghat`` with ``G = (x b)^2``.  The T-tensor
has two independent reduced components in the ``gbar``-orthonormal frame::

    fiber:         T_f  = |d_nu log G|
    radial-fiber:  T_rf = |d_nu log G + d_nu log A| / 2,    A = a^2

where ``d_nu = a^{-1} d/dx`` is the unit normal derivative and
``d/dx = -e^s d/ds``.  Both vanish at ``x = 0`` exactly when the boundary is
totally geodesic for ``gbar``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from crflow.errors import GridError
from crflow.geometry.curvature import compute_curvature
from crflow.geometry.grid import Family, RadialGrid, diff1
from crflow.geometry.metric import SymmetricMetric


def weighted_sup_norm(field, mu: float, grid: RadialGrid, mask=None) -> float:
    """``max e^{mu s} |field|``: the zeroth-order proxy for ``x^mu C_e``."""
    if grid.family is not Family.AH_BALL:
        raise GridError("weighted norms are defined on AH_BALL grids")
    field = np.asarray(field, dtype=float)
    if not np.all(np.isfinite(field)):
        raise GridError("weighted_sup_norm: field contains NaN or inf")
    sl = slice(None) if mask is None else mask
    return float(np.max(np.exp(mu * grid.s_values[sl]) * np.abs(field[sl])))


def decay_rate_fit(field, grid: RadialGrid, window) -> float:
    """Least-squares slope of ``-log|field|`` against ``s`` on ``window``.

    Raises :class:`GridError` when the field vanishes or changes sign on the
    window, since no exponent describes such data.
    """
    lo, hi = window
    s = grid.s_values
    sel = (s >= lo - 1e-12) & (s <= hi + 1e-12)
    if np.count_nonzero(sel) < 3:
        raise GridError(f"decay window [{lo}, {hi}] holds fewer than 3 nodes")
    f = np.asarray(field, dtype=float)[sel]
    if not np.all(np.isfinite(f)):
        raise GridError("decay fit undefined: non-finite values in window")
    if np.any(f == 0) or not (np.all(f > 0) or np.all(f < 0)):
        raise GridError("decay fit undefined: field vanishes or changes sign in window")
    slope, _ = np.polyfit(s[sel], -np.log(np.abs(f)), 1)
    return float(slope)


def default_window(grid: RadialGrid, band_width: float = 1.0) -> tuple:
    """Far-field window used for decay fits: ``[s_max/4, s_max - band_width - 1]``."""
    return (0.25 * grid.s_max, grid.s_max - band_width - 1.0)


@dataclass(frozen=True, eq=False)
class TTensorReport:
    t_sup_per_slice: np.ndarray
    t_fiber: np.ndarray
    t_radial_fiber: np.ndarray
    boundary_limit: float
    tolerance: float
    totally_geodesic: bool


def _boundary_extrapolate(x, y, degree: int = 3) -> float:
    return float(np.polyval(np.polyfit(x, y, degree), 0.0))


def t_tensor_report(g: SymmetricMetric, tolerance: float | None = None,
                    window: tuple | None = None) -> TTensorReport:
    """Reduced T-tensor per radius and its extrapolated boundary value.

    The limit at ``x = 0`` is a cubic fit in ``x`` over the far-field
    ``window`` (default ``[s_max/2, s_max - 1]``), away from the one-sided
    stencils at the truncation.  Default tolerance: ``10 ds^2``.
    """
    if g.family is not Family.AH_BALL:
        raise GridError("the T-tensor needs a conformal boundary (AH_BALL only)")
    grid = g.grid
    s = grid.s_values
    tol = 10 * grid.spacing ** 2 if tolerance is None else float(tolerance)
    # d/ds log(x b) = B'/B - 1 + beta', with coth(s) - 1 evaluated stably
    dlogxb = g.background.log_derivative_minus_one(s) + diff1(g.beta, grid)
    dlog_a = diff1(g.alpha, grid)
    with np.errstate(invalid="ignore", over="ignore"):
        dx_log_G = -2.0 * np.exp(s) * dlogxb
        dx_log_A = -2.0 * np.exp(s) * dlog_a
        a = g.a
        t_f = np.abs(dx_log_G) / a
        t_rf = 0.5 * np.abs(dx_log_G + dx_log_A) / a
    t_f[0] = t_rf[0] = 0.0   # the pole is not part of the far field
    t_sup = np.maximum(t_f, t_rf)
    lo, hi = window if window is not None else (0.5 * grid.s_max, grid.s_max - 1.0)
    sel = (s >= lo) & (s <= hi)
    x = np.exp(-s[sel])
    # signed components so the fit sees smooth data through x = 0
    lim_f = abs(_boundary_extrapolate(x, (dx_log_G / a)[sel]))
    lim_rf = abs(_boundary_extrapolate(x, (0.5 * (dx_log_G + dx_log_A) / a)[sel]))
    limit = max(lim_f, lim_rf)
    return TTensorReport(t_sup, t_f, t_rf, limit, tol, bool(limit <= tol))


def einstein_deviation_norm(g: SymmetricMetric) -> np.ndarray:
    """``|Rc + m g|`` per node."""
    return np.sqrt(compute_curvature(g).norm_dev_sq)


@dataclass(frozen=True)
class DecayVerdict:
    weighted_sup: float
    weighted_sup_extended: float
    ratio: float
    stable: bool


def compare_weighted_sups(dev_short, grid_short: RadialGrid, dev_long, grid_long: RadialGrid,
                          mu: float = 2.0, max_ratio: float = 1.5,
                          band_width: float = 1.0) -> DecayVerdict:
    """Grid-stability verdict for ``x^mu``-weighted sups on two extents.

    A field in ``x^mu C`` has weighted sups that settle as the domain grows;
    an ``O(x^nu)`` field with ``nu < mu`` grows like ``e^{(mu - nu) extend}``.
    """
    w1 = weighted_sup_norm(dev_short, mu, grid_short, grid_short.trusted_mask(band_width))
    w2 = weighted_sup_norm(dev_long, mu, grid_long, grid_long.trusted_mask(band_width))
    ratio = w2 / w1 if w1 > 0 else (1.0 if w2 == 0 else np.inf)
    return DecayVerdict(w1, w2, float(ratio), bool(np.isfinite(w2) and ratio <= max_ratio))


__all__ = [
    "weighted_sup_norm", "decay_rate_fit", "default_window", "TTensorReport", "t_tensor_report",
    "einstein_deviation_norm", "DecayVerdict", "compare_weighted_sups",
]
