import numpy as np
import pytest

from crflow.errors import GridError
from crflow.geometry.asymptotics import (
    decay_rate_fit, t_tensor_report, weighted_sup_norm,
)
from crflow.geometry.conformal import conformal_normalize
from crflow.geometry.curvature import compute_curvature
from crflow.geometry.grid import RadialGrid
from crflow.geometry.metric import build_background, metric_from_profiles, perturbed
from crflow.geometry.profiles import perturbation_fields

from scenarios import COUNTEREXAMPLES, far_field_pair, far_field_verdicts


GRID = RadialGrid.ah(8.0, 401)


def test_weighted_sup_zero_field():
    assert weighted_sup_norm(np.zeros(401), 3.0, GRID) == 0.0


def test_weighted_sup_exact_cancellation():
    assert weighted_sup_norm(np.exp(-2 * GRID.s_values), 2.0, GRID) == pytest.approx(1.0, abs=1e-14)


def test_weighted_sup_rejects_nan_and_closed():
    f = np.zeros(401)
    f[7] = np.nan
    with pytest.raises(GridError):
        weighted_sup_norm(f, 2.0, GRID)
    with pytest.raises(GridError):
        weighted_sup_norm(np.zeros(11), 2.0, RadialGrid.closed(np.pi, 11))


def _weighted_dev(n, normalize):
    h = build_background("AH_BALL", 3, s_max=8.0, n_points=n)
    da, db = perturbation_fields(h, 0.01, "random", seed=3)
    g = perturbed(h, da, db)
    if normalize:
        g = conformal_normalize(g)
    dev = np.sqrt(compute_curvature(g).norm_dev_sq)
    return weighted_sup_norm(dev, 2.0, g.grid, g.grid.trusted_mask())


def test_weighted_sup_of_einstein_deviation_is_grid_stable():
    vals = [_weighted_dev(n, False) for n in (401, 801, 1601)]
    assert np.isfinite(vals).all()
    assert abs(vals[1] - vals[2]) <= 0.01 * vals[2]
    assert abs(vals[0] - vals[2]) <= 0.01 * vals[2]


def test_weighted_sup_after_normalization_is_bounded_discretization_error():
    """Normalized rotational data is Einstein, so what remains shrinks like ds^2."""
    coarse, fine = (_weighted_dev(n, True) for n in (401, 801))
    assert np.isfinite([coarse, fine]).all()
    assert fine < coarse
    assert np.log2(coarse / fine) > 1.8


@pytest.mark.parametrize("scale,rate", [(5.0, 2.0), (1.0, 4.0)])
def test_decay_fit_exact_log_linear(scale, rate):
    f = scale * np.exp(-rate * GRID.s_values)
    assert decay_rate_fit(f, GRID, (2.0, 6.0)) == pytest.approx(rate, abs=1e-10)


def test_decay_fit_refuses_sign_change_or_zero():
    s = GRID.s_values
    with pytest.raises(GridError):
        decay_rate_fit(np.exp(-2 * s) * np.cos(3 * s), GRID, (2.0, 6.0))
    f = np.exp(-2 * s)
    f[250] = 0.0
    with pytest.raises(GridError):
        decay_rate_fit(f, GRID, (2.0, 6.0))


def test_t_tensor_hyperbolic_is_totally_geodesic():
    rep = t_tensor_report(build_background("AH_BALL", 3, s_max=8.0, n_points=401))
    assert rep.boundary_limit <= 1e-8
    assert rep.totally_geodesic
    assert np.all(rep.t_sup_per_slice >= 0)


def test_t_tensor_second_order_correction_is_still_totally_geodesic():
    """b = sinh(s) + 0.1 e^{-s}: x b = 1/2 + 0.1 x^2 - x^2/2 has zero x-derivative at x = 0."""
    h = build_background("AH_BALL", 3, s_max=8.0, n_points=401)
    g = metric_from_profiles(h, np.ones(401), np.sinh(h.s) + 0.1 * np.exp(-h.s))
    rep = t_tensor_report(g)
    assert rep.totally_geodesic


@pytest.mark.parametrize("eps", [0.01, 0.1])
def test_t_tensor_first_order_correction_is_rejected(eps):
    """b = sinh(s) + eps tanh(s)^3: d/dx log (x b)^2 -> 4 eps at the boundary."""
    h = build_background("AH_BALL", 3, s_max=8.0, n_points=401)
    g = metric_from_profiles(h, np.ones(401), np.sinh(h.s) + eps * np.tanh(h.s) ** 3)
    rep = t_tensor_report(g)
    assert not rep.totally_geodesic
    assert rep.boundary_limit == pytest.approx(4 * eps, rel=1e-3)


def test_t_tensor_closed_family_rejected():
    with pytest.raises(GridError):
        t_tensor_report(build_background("CLOSED", 2, n_points=51))


@pytest.mark.parametrize("profile", ["warp", "lapse", "both", "random"])
def test_quadratic_decay_implies_totally_geodesic(profile):
    short, long_ = far_field_pair(profile, 2.0, 0.05, seed=4)
    decay, tt = far_field_verdicts(short, long_)
    assert decay.stable and tt.totally_geodesic


@pytest.mark.parametrize("case", COUNTEREXAMPLES)
def test_linear_deviation_rejected_by_both_verdicts(case):
    short, long_ = far_field_pair(**case)
    decay, tt = far_field_verdicts(short, long_)
    assert not decay.stable and not tt.totally_geodesic
