"""Pressure constraint of the conformal Ricci flow on the radial reduction.

AH ball:   (-Delta_g + (m+1)) p = |Rc + m g|^2 / m,  p(s_max) = 0
closed:    ((n-1) Delta_g + 2nc) p = -|Rc - 2c g|^2

``Delta_g p = (a b^m)^{-1} d/ds (b^m / a dp/ds)`` is discretized in
divergence (finite-volume) form, so the matrix is symmetric with respect to
the volume weights ``w_i ~ a_i b_i^m ds``.  Poles are cells of half width with
the Neumann regularity condition built in.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import spsolve

from crflow.errors import NearSingularOperatorError, SolverError
from crflow.geometry.curvature import CurvatureBundle
from crflow.geometry.grid import OUTER, POLE, Family
from crflow.geometry.metric import SymmetricMetric

NEAR_SINGULAR_RATIO = 1e-8


@dataclass(frozen=True, eq=False)
class EllipticOperator:
    """Tridiagonal operator ``L = sigma * Delta + shift``.

    ``sub[i]`` couples row ``i`` to node ``i-1`` and ``sup[i]`` to ``i+1``;
    for periodic grids ``sub[0]``/``sup[-1]`` are the wrap-around entries and
    the duplicated last node is left out of the unknowns.
    """

    diag: np.ndarray
    sub: np.ndarray
    sup: np.ndarray
    bc_inner: str
    bc_outer: str
    shift: float
    sigma: float
    log_weights: np.ndarray
    family: Family
    periodic: bool = False
    singular_ratio: float | None = None
    near_kernel: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.diag.size

    @property
    def near_singular(self) -> bool:
        return self.singular_ratio is not None and self.singular_ratio <= NEAR_SINGULAR_RATIO

    def dense(self) -> np.ndarray:
        n = self.size
        M = np.diag(self.diag)
        M[np.arange(1, n), np.arange(n - 1)] = self.sub[1:]
        M[np.arange(n - 1), np.arange(1, n)] = self.sup[:-1]
        if self.periodic:
            M[0, n - 1] += self.sub[0]
            M[n - 1, 0] += self.sup[-1]
        return M

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = self._unknowns(u)
        out = self.diag * u
        out[1:] += self.sub[1:] * u[:-1]
        out[:-1] += self.sup[:-1] * u[1:]
        if self.periodic:
            out[0] += self.sub[0] * u[-1]
            out[-1] += self.sup[-1] * u[0]
        return self._nodal(out)

    def symmetrized(self) -> np.ndarray:
        """``W^{1/2} L W^{-1/2}``: symmetric, same spectrum as ``L``."""
        M = self.dense()
        lw = self.log_weights
        return M * np.exp(0.5 * (lw[:, None] - lw[None, :]))

    def _unknowns(self, u):
        u = np.asarray(u, dtype=float)
        return u[:-1].copy() if self.periodic else u.copy()

    def _nodal(self, v):
        return np.append(v, v[0]) if self.periodic else v


@dataclass(frozen=True, eq=False)
class PressureField:
    p: np.ndarray
    dp: np.ndarray
    d2p: np.ndarray
    d3p: np.ndarray
    solve_residual: float
    forced_zero: bool = False

    @classmethod
    def zero(cls, n_points: int, forced: bool = False) -> "PressureField":
        z = np.zeros(n_points)
        return cls(z, z, z, z, 0.0, forced)


def _background_cell_volumes(g: SymmetricMetric, order: int = 8) -> np.ndarray:
    """``int B^m ds`` over each dual cell, by Gauss-Legendre quadrature.

    Using the exact background volume (rather than ``B_i^m ds``) keeps the
    rows next to a pole consistent, where ``B^m`` varies by O(1) across a cell.
    """
    grid = g.grid
    s = grid.s_values
    h = 0.5 * grid.spacing
    lo = np.maximum(s - h, s[0])
    hi = np.minimum(s + h, s[-1])
    if grid.periodic:
        lo, hi = s - h, s + h
    xq, wq = np.polynomial.legendre.leggauss(order)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    nodes = mid[:, None] + half[:, None] * xq[None, :]
    return half * (np.abs(g.background.profile(nodes)) ** g.m @ wq)


def _half_node_ratios(g: SymmetricMetric):
    """Flux coefficients divided by the cell volume, for both faces of every node.

    Returns ``(left, right, log_w)`` with ``Delta p_i = left_i (p_{i-1} - p_i)
    + right_i (p_{i+1} - p_i)`` and ``log_w`` the log of the cell volumes.
    """
    grid = g.grid
    m = g.m
    ds = grid.spacing
    a = g.a
    s = grid.s_values
    # face values: exact background profile, log-averaged perturbations
    bh = g.background.profile(0.5 * (s[1:] + s[:-1])) * np.exp(0.5 * (g.beta[1:] + g.beta[:-1]))
    ah = np.exp(0.5 * (g.alpha[1:] + g.alpha[:-1]))
    N = grid.n_points
    log_w = np.log(a) + m * g.beta + np.log(_background_cell_volumes(g))
    left = np.zeros(N)
    right = np.zeros(N)
    with np.errstate(divide="ignore"):
        log_flux = m * np.log(bh) - np.log(ah) - np.log(ds)   # face i+1/2
    right[:-1] = np.exp(log_flux - log_w[:-1])
    left[1:] = np.exp(log_flux - log_w[1:])
    if grid.periodic:
        # node N-1 duplicates node 0
        left[0] = left[-1]
    return left, right, log_w


def assemble_operator(g: SymmetricMetric, check_spectrum: bool = True) -> EllipticOperator:
    """Discretize the pressure operator of ``g``'s family.

    For closed geometries the spectrum is checked (dense symmetric eigen
    decomposition) and the smallest |eigenvalue| / norm ratio is stored; the
    solver refuses when it is below ``NEAR_SINGULAR_RATIO``.
    """
    grid = g.grid
    m = g.m
    left, right, log_w = _half_node_ratios(g)
    if g.family is Family.AH_BALL:
        sigma, shift = -1.0, float(m + 1)
    else:
        sigma, shift = float(g.n - 1), 2.0 * g.n * float(g.c)
    diag = sigma * -(left + right) + shift
    sub = sigma * left
    sup = sigma * right
    bc_inner = "regular" if grid.ends[0] == POLE else grid.ends[0]
    bc_outer = "regular" if grid.ends[1] == POLE else grid.ends[1]
    if grid.ends[1] == OUTER:
        diag[-1], sub[-1], sup[-1] = 1.0, 0.0, 0.0
        bc_outer = "dirichlet"
    if grid.periodic:
        diag, sub, sup, log_w = diag[:-1], sub[:-1], sup[:-1], log_w[:-1]
        sub[0] = sigma * left[0]
        sup[-1] = sigma * right[-2]
    op = EllipticOperator(diag, sub, sup, bc_inner, bc_outer, shift, sigma, log_w,
                          g.family, periodic=grid.periodic)
    if check_spectrum and g.family is Family.CLOSED:
        ratio, vec = spectral_ratio(op)
        op = EllipticOperator(diag, sub, sup, bc_inner, bc_outer, shift, sigma, log_w,
                              g.family, grid.periodic, ratio, op._nodal(vec))
    return op


def spectral_ratio(op: EllipticOperator):
    """Smallest singular value over operator norm, and the near-kernel vector."""
    S = op.symmetrized()
    evals, evecs = np.linalg.eigh(0.5 * (S + S.T))
    k = np.argmin(np.abs(evals))
    vec = evecs[:, k] * np.exp(-0.5 * op.log_weights)
    vec = vec / np.max(np.abs(vec))
    return float(abs(evals[k]) / np.max(np.abs(evals))), vec


def pressure_source(curv: CurvatureBundle, family, m: int, c: float | None = None) -> np.ndarray:
    """Right-hand side of the pressure equation."""
    if Family(family) is Family.AH_BALL:
        return curv.norm_dev_sq / m
    return -curv.norm_dev_sq


def _diff1_o4(f: np.ndarray, grid) -> np.ndarray:
    """Fourth-order first derivative with one-sided end stencils.

    The pressure derivatives are nested three deep; a uniformly fourth-order
    stencil keeps the end-node error smooth enough to survive that nesting.
    """
    h = grid.spacing
    if grid.periodic:
        c = f[:-1]
        d = (np.roll(c, 2) - 8 * np.roll(c, 1) + 8 * np.roll(c, -1) - np.roll(c, -2)) / (12 * h)
        return np.append(d, d[0])
    d = np.empty_like(f)
    d[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    for sgn, idx in ((1.0, np.arange(5)), (-1.0, -1 - np.arange(5))):
        v = f[idx]
        d[idx[0]] = sgn * (-25 * v[0] + 48 * v[1] - 36 * v[2] + 16 * v[3] - 3 * v[4]) / (12 * h)
        d[idx[1]] = sgn * (-3 * v[0] - 10 * v[1] + 18 * v[2] - 6 * v[3] + v[4]) / (12 * h)
    return d


def _derivatives(p, g):
    grid = g.grid
    a = g.a
    dp = _diff1_o4(p, grid) / a
    d2p = _diff1_o4(dp, grid) / a
    d3p = _diff1_o4(d2p, grid) / a
    return dp, d2p, d3p


def solve_pressure(op: EllipticOperator, source: np.ndarray, g: SymmetricMetric,
                   tol: float = 1e-10, zero_source_tol: float = 1e-14) -> PressureField:
    """Direct solve of ``op p = source`` plus frame derivatives of ``p``.

    A near-singular closed operator is refused unless the source vanishes
    (``max|source| <= zero_source_tol``), in which case ``p = 0`` is returned
    and flagged ``forced_zero``.
    """
    source = np.asarray(source, dtype=float)
    if not np.all(np.isfinite(source)):
        raise SolverError("non-finite pressure source")
    if op.near_singular:
        if np.max(np.abs(source)) <= zero_source_tol:
            return PressureField.zero(source.size, forced=True)
        raise NearSingularOperatorError(
            f"pressure operator is near-singular (ratio {op.singular_ratio:.3e}); "
            "c sits on the Laplace spectrum",
            op.singular_ratio, op.near_kernel)
    rhs = op._unknowns(source)
    if op.bc_outer == "dirichlet":
        rhs[-1] = 0.0
    if op.periodic:
        n = op.size
        rows = np.concatenate([np.arange(n), np.arange(1, n), np.arange(n - 1), [0, n - 1]])
        cols = np.concatenate([np.arange(n), np.arange(n - 1), np.arange(1, n), [n - 1, 0]])
        vals = np.concatenate([op.diag, op.sub[1:], op.sup[:-1], [op.sub[0], op.sup[-1]]])
        p = spsolve(csr_matrix((vals, (rows, cols)), shape=(n, n)), rhs)
    else:
        ab = np.zeros((3, op.size))
        ab[0, 1:] = op.sup[:-1]
        ab[1] = op.diag
        ab[2, :-1] = op.sub[1:]
        try:
            p = solve_banded((1, 1), ab, rhs, check_finite=True)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"tridiagonal solve broke down: {exc}") from exc
    if not np.all(np.isfinite(p)):
        raise SolverError("pressure solve produced non-finite values")
    resid_vec = op.apply(op._nodal(p))[: op.size] - rhs
    scale = np.max(np.abs(op.diag)) * max(np.max(np.abs(p)), 1e-300) + np.max(np.abs(rhs))
    residual = float(np.max(np.abs(resid_vec)) / scale) if scale > 0 else 0.0
    if residual > tol:
        raise SolverError(f"pressure residual {residual:.3e} exceeds tolerance {tol:.1e}")
    p = op._nodal(p)
    dp, d2p, d3p = _derivatives(p, g)
    return PressureField(p, dp, d2p, d3p, residual)


def pressure_for(g: SymmetricMetric, curv: CurvatureBundle, op: EllipticOperator | None = None,
                 tol: float = 1e-10) -> PressureField:
    """Assemble (unless given) and solve the pressure equation of ``g``."""
    if op is None:
        op = assemble_operator(g)
    src = pressure_source(curv, g.family, g.m, g.c)
    return solve_pressure(op, src, g, tol=tol)


def derivatives_of(p: np.ndarray, g: SymmetricMetric) -> PressureField:
    """Wrap a given nodal ``p`` with its frame derivatives (no solve)."""
    dp, d2p, d3p = _derivatives(np.asarray(p, dtype=float), g)
    return PressureField(np.asarray(p, dtype=float), dp, d2p, d3p, 0.0)


def verify_pressure_bounds(pf: PressureField, k_tilde: float, mask=None):
    """Check ``max_i sup|grad^i p| <= k_tilde`` for i = 0..3.

    Returns ``(ok, report)`` with the four suprema under keys
    ``p_sup, dp_sup, d2p_sup, d3p_sup``.
    """
    sl = slice(None) if mask is None else mask
    report = {
        "p_sup": float(np.max(np.abs(pf.p[sl]))),
        "dp_sup": float(np.max(np.abs(pf.dp[sl]))),
        "d2p_sup": float(np.max(np.abs(pf.d2p[sl]))),
        "d3p_sup": float(np.max(np.abs(pf.d3p[sl]))),
    }
    report["k_tilde"] = float(k_tilde)
    ok = max(report[k] for k in ("p_sup", "dp_sup", "d2p_sup", "d3p_sup")) <= k_tilde
    return ok, report
