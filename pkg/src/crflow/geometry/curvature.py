"""Curvature of doubly-warped metrics.

In the orthonormal frame ``e_0 = a^{-1} d/ds``, ``e_i = b^{-1} (fiber)`` the
curvature operator is diagonal with two sectional curvatures::

    k_rad = -(1 / (a b)) d/ds (b' / a)        (planes containing e_0)
    k_sph = (kappa - (b' / a)^2) / b^2        (fiber planes)

Everything else (Ricci, scalar, Einstein deviation, norms) is algebra on
these two profiles.  ``|grad Rm|`` uses the connection
``nabla_{e_i} e_0 = h e_i`` with ``h = b' / (a b)``::

    |grad Rm|^2 = 4m (k_rad'/a)^2 + 2m(m-1) (k_sph'/a)^2
                  + 8m(m-1) h^2 (k_rad - k_sph)^2

The module also carries a small frame-tensor engine (full component arrays
in the adapted frame) used to cross-check that closed form and to build
``grad grad Rm`` for the second-order derivative estimates.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from crflow.errors import DegenerateMetricError
from crflow.geometry.grid import diff1, diff2, fill_poles_even
from crflow.geometry.metric import SymmetricMetric


@dataclass(frozen=True, eq=False)
class CurvatureBundle:
    k_rad: np.ndarray
    k_sph: np.ndarray
    ric_rad: np.ndarray
    ric_tan: np.ndarray
    scalar: np.ndarray
    einstein_dev_rad: np.ndarray
    einstein_dev_tan: np.ndarray
    norm_rm_sq: np.ndarray
    norm_dev_sq: np.ndarray
    grad_rm_norm: np.ndarray
    h: np.ndarray  # b' / (a b), the fiber mean-curvature factor
    m: int

    @property
    def norm_rm(self) -> np.ndarray:
        return np.sqrt(self.norm_rm_sq)


def _nonpole(grid):
    mask = np.ones(grid.n_points, dtype=bool)
    mask[grid.pole_indices()] = False
    return mask


def warping_log_derivative(g: SymmetricMetric, dbeta=None) -> np.ndarray:
    """``b'/b`` at non-pole nodes (NaN at poles)."""
    grid = g.grid
    if dbeta is None:
        dbeta = diff1(g.beta, grid)
    C = g.background.log_derivative(grid.s_values)
    out = np.full(grid.n_points, np.nan)
    mask = _nonpole(grid)
    out[mask] = C[mask] + dbeta[mask]
    return out


def sectional_arrays(alpha, beta, grid, background):
    """``(k_rad, k_sph, h)`` from log-perturbation arrays (complex-step safe).

    At a regular pole the two sectional curvatures coincide and equal
    ``exp(-2 alpha) (k0 - 3 beta'' + alpha'')``; the lapse factor is used for
    both so that ``beta - alpha`` stays frozen at poles under the flow.
    """
    da, dda = diff1(alpha, grid), diff2(alpha, grid)
    db, ddb = diff1(beta, grid), diff2(beta, grid)
    k0 = background.curvature
    mask = _nonpole(grid)
    dtype = np.result_type(alpha, beta, float)
    k_rad = np.empty(grid.n_points, dtype=dtype)
    k_sph = np.empty(grid.n_points, dtype=dtype)
    h = np.full(grid.n_points, np.nan, dtype=dtype)
    C = background.log_derivative(grid.s_values)[mask]
    da_, dda_, db_, ddb_ = da[mask], dda[mask], db[mask], ddb[mask]
    al, be = alpha[mask], beta[mask]
    q2 = 2.0 * (be - al)
    k_rad[mask] = np.exp(-2 * al) * (k0 - 2 * C * db_ - ddb_ - db_ * db_ + (C + db_) * da_)
    # kappa / B^2 - (B'/B)^2 == k0 exactly for every background
    k_sph[mask] = np.exp(-2 * be) * (
        k0 - C * C * np.expm1(q2) - (2 * C * db_ + db_ * db_) * np.exp(q2)
    )
    h[mask] = np.exp(-al) * (C + db_)
    for i in grid.pole_indices():
        k_pole = np.exp(-2 * alpha[i]) * (k0 - 3 * ddb[i] + dda[i])
        k_rad[i] = k_sph[i] = k_pole
    return k_rad, k_sph, h


def sectional_curvatures(g: SymmetricMetric):
    """Return ``(k_rad, k_sph, h)``; ``h`` is NaN at poles."""
    return sectional_arrays(g.alpha, g.beta, g.grid, g.background)


def grad_rm_norm_sq(k_rad, k_sph, h, a, grid, m) -> np.ndarray:
    dk_rad = diff1(k_rad, grid) / a
    dk_sph = diff1(k_sph, grid) / a
    out = 4 * m * dk_rad ** 2 + 2 * m * (m - 1) * dk_sph ** 2
    with np.errstate(invalid="ignore"):
        out = out + 8 * m * (m - 1) * (h * (k_rad - k_sph)) ** 2
    if grid.pole_indices():
        out = np.maximum(fill_poles_even(out, grid), 0.0)
    return out


def compute_curvature(g: SymmetricMetric) -> CurvatureBundle:
    """All curvature fields of ``g`` on its grid."""
    grid = g.grid
    interior = _nonpole(grid)
    if np.any(g.b[interior] <= 0):
        raise DegenerateMetricError("warping function vanished at an interior node")
    k_rad, k_sph, h = sectional_curvatures(g)
    m = g.m
    if not (np.all(np.isfinite(k_rad)) and np.all(np.isfinite(k_sph))):
        raise DegenerateMetricError("non-finite curvature (blow-up upstream)")
    ric_rad = m * k_rad
    ric_tan = k_rad + (m - 1) * k_sph
    scalar = m * (2 * k_rad + (m - 1) * k_sph)
    lam = g.einstein_shift
    dev_rad = ric_rad - lam
    dev_tan = ric_tan - lam
    norm_rm_sq = 4 * m * k_rad ** 2 + 2 * m * (m - 1) * k_sph ** 2
    norm_dev_sq = dev_rad ** 2 + m * dev_tan ** 2
    grad = np.sqrt(grad_rm_norm_sq(k_rad, k_sph, h, g.a, grid, m))
    return CurvatureBundle(
        k_rad=k_rad, k_sph=k_sph, ric_rad=ric_rad, ric_tan=ric_tan, scalar=scalar,
        einstein_dev_rad=dev_rad, einstein_dev_tan=dev_tan,
        norm_rm_sq=norm_rm_sq, norm_dev_sq=norm_dev_sq, grad_rm_norm=grad, h=h, m=m,
    )


# ---------------------------------------------------------------------------
# frame-tensor engine
# ---------------------------------------------------------------------------

def _kn(s, t):
    """Kulkarni-Nomizu-type product with ``(g o g)_{ijji} = 2``."""
    return (np.einsum("il,jk->ijkl", s, t) + np.einsum("jk,il->ijkl", s, t)
            - np.einsum("ik,jl->ijkl", s, t) - np.einsum("jl,ik->ijkl", s, t))


def curvature_basis(m: int):
    """Constant tensors ``A`` (radial planes) and ``B`` (fiber planes).

    ``Rm = k_rad A + k_sph B`` with the convention ``g^{kl} R_{iklj} = R_ij``.
    """
    n = m + 1
    g = np.eye(n)
    theta = np.zeros((n, n))
    theta[0, 0] = 1.0
    A = _kn(theta, g)
    B = 0.5 * _kn(g, g) - A
    return A, B


def connection_table(m: int) -> np.ndarray:
    """``G[p, q, j]`` with ``<nabla_{e_p} e_q, e_j> = h G[p, q, j]``."""
    n = m + 1
    G = np.zeros((n, n, n))
    for i in range(1, n):
        G[i, 0, i] = 1.0
        G[i, i, 0] = -1.0
    return G


def riemann_frame(curv: CurvatureBundle) -> np.ndarray:
    """Full ``Rm`` component array, shape ``(N, n, n, n, n)``."""
    A, B = curvature_basis(curv.m)
    return curv.k_rad[:, None, None, None, None] * A + curv.k_sph[:, None, None, None, None] * B


def frame_covariant_derivative(T: np.ndarray, g: SymmetricMetric, h: np.ndarray) -> np.ndarray:
    """Covariant derivative of an O(m)-invariant frame tensor field.

    ``T`` has shape ``(N, n, ..., n)``; the result gets a new derivative
    slot right after the node axis.  Fiber-intrinsic connection terms drop out
    because the component arrays are rotation invariant.
    """
    grid = g.grid
    N = T.shape[0]
    rank = T.ndim - 1
    n = T.shape[1]
    G = connection_table(n - 1)
    flat = T.reshape(N, -1)
    dT = np.empty_like(flat)
    for j in range(flat.shape[1]):
        dT[:, j] = diff1(flat[:, j], grid, parity=None)
    dT = dT.reshape(T.shape) / g.a.reshape((N,) + (1,) * rank)
    out = np.zeros((N, n) + T.shape[1:])
    out[:, 0] = dT
    hh = np.where(np.isfinite(h), h, 0.0)
    for slot in range(rank):
        # sum_j G[p, i_slot, j] T[..., j (at slot), ...]
        Tm = np.moveaxis(T, slot + 1, -1)
        contracted = np.einsum("pqj,N...j->Np...q", G, Tm)
        contracted = np.moveaxis(contracted, -1, slot + 2)
        out -= hh.reshape((N,) + (1,) * (rank + 1)) * contracted
    if grid.pole_indices():
        for i in grid.pole_indices():
            j1, j2 = (1, 2) if i == 0 else (-2, -3)
            out[i] = (4 * out[j1] - out[j2]) / 3
    return out


def tensor_norm(T: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(T.reshape(T.shape[0], -1) ** 2, axis=1))


def grad_rm_frame(g: SymmetricMetric, curv: CurvatureBundle | None = None) -> np.ndarray:
    """``grad Rm`` as a frame array (oracle for the closed form)."""
    curv = compute_curvature(g) if curv is None else curv
    return frame_covariant_derivative(riemann_frame(curv), g, curv.h)


def grad2_rm_norm(g: SymmetricMetric, curv: CurvatureBundle | None = None) -> np.ndarray:
    """``|grad grad Rm|`` by frame differentiation of ``grad Rm``."""
    curv = compute_curvature(g) if curv is None else curv
    d1 = grad_rm_frame(g, curv)
    return tensor_norm(frame_covariant_derivative(d1, g, curv.h))


def hessian_norm(f: np.ndarray, g: SymmetricMetric, h: np.ndarray | None = None) -> np.ndarray:
    """``|Hess f|`` of a radial function (radial and ``m`` tangential eigenvalues)."""
    grid = g.grid
    a = g.a
    if h is None:
        h = compute_curvature(g).h
    df = diff1(f, grid) / a
    hss = diff1(df, grid) / a
    with np.errstate(invalid="ignore"):
        htan = h * df
    out = hss ** 2 + g.m * htan ** 2
    if grid.pole_indices():
        out = fill_poles_even(out, grid)
    return np.sqrt(np.maximum(out, 0.0))


def laplacian_nodal(f: np.ndarray, g: SymmetricMetric, h: np.ndarray | None = None) -> np.ndarray:
    """Non-divergence ``Delta f = f_ss/a^2 - a' f'/a^3 + m h f'/a`` (diagnostic use)."""
    grid = g.grid
    a = g.a
    if h is None:
        h = compute_curvature(g).h
    df = diff1(f, grid)
    out = diff2(f, grid) / a ** 2 - diff1(g.alpha, grid) * df / a ** 2
    with np.errstate(invalid="ignore"):
        out = out + g.m * h * df / a
    for i in grid.pole_indices():
        # at a pole h * f'/a -> f''/a^2
        out[i] = (g.m + 1) * diff2(f, grid)[i] / a[i] ** 2
    return out


__all__ = [
    "CurvatureBundle", "compute_curvature", "sectional_curvatures", "grad_rm_frame",
    "grad2_rm_norm", "riemann_frame", "frame_covariant_derivative", "curvature_basis",
    "tensor_norm", "hessian_norm", "laplacian_nodal", "warping_log_derivative",
]
