import numpy as np
import pytest

from crflow.errors import DegenerateMetricError, GridError
from crflow.geometry.grid import Family, RadialGrid, diff1, diff2
from crflow.geometry.metric import build_background, metric_from_profiles, perturbed
from crflow.geometry.curvature import compute_curvature


def test_ah_grid_invariants():
    g = RadialGrid.ah(8.0, 401)
    assert g.s_values[0] == 0.0
    assert g.s_values[-1] == 8.0
    assert abs(g.spacing * (g.n_points - 1) - g.s_values[-1]) <= np.finfo(float).eps * 8
    assert np.all(np.diff(g.s_values) > 0)
    np.testing.assert_allclose(g.x, np.exp(-g.s_values))


def test_closed_grid_has_two_poles():
    g = RadialGrid.closed(np.pi, 101)
    assert g.pole_indices() == [0, 100]
    assert RadialGrid.closed(2 * np.pi, 101, periodic=True).pole_indices() == []


@pytest.mark.parametrize("n,smax", [(4, 8.0), (401, 0.0), (401, -1.0), (401, np.nan)])
def test_grid_rejects_bad_parameters(n, smax):
    with pytest.raises(GridError):
        RadialGrid.ah(smax, n)


def test_trusted_band_excludes_poles_and_far_layer():
    g = RadialGrid.ah(8.0, 401)
    mask = g.trusted_mask()
    assert not mask[:3].any() and mask[3]
    assert g.s_values[mask].max() <= 7.0 + 1e-12
    closed = RadialGrid.closed(np.pi, 101).trusted_mask()
    assert not closed[:3].any() and not closed[-3:].any()


def test_stencils_second_order_with_parity():
    errs = []
    for n in (101, 201, 401):
        g = RadialGrid.ah(3.0, n)
        s = g.s_values
        even = np.cos(s) + s ** 4
        odd = np.sin(s)
        e1 = np.max(np.abs(diff1(even, g) - (-np.sin(s) + 4 * s ** 3)))
        e2 = np.max(np.abs(diff2(even, g) - (-np.cos(s) + 12 * s ** 2)))
        e3 = np.max(np.abs(diff1(odd, g, parity="odd") - np.cos(s)))
        errs.append((e1, e2, e3))
    errs = np.array(errs)
    orders = np.log2(errs[:-1] / errs[1:])
    assert np.all(orders > 1.8), orders


def test_build_background_examples():
    h = build_background("AH_BALL", 3, s_max=8.0, n_points=401)
    np.testing.assert_allclose(h.b, np.sinh(h.s))
    np.testing.assert_allclose(h.a, 1.0)
    assert h.scalar_target == -12.0
    sph = build_background("CLOSED", 2, n_points=201)
    np.testing.assert_allclose(sph.b, np.sin(sph.s), atol=1e-15)
    assert abs(sph.grid.s_max - np.pi) < 1e-15
    assert np.allclose(compute_curvature(sph).scalar, 6.0)
    flat = build_background("CLOSED", 2, kappa=0, n_points=101, c=-1.0)
    assert flat.grid.periodic and np.allclose(flat.b, 1.0)


def test_build_background_m4_scalar_within_1e8():
    h = build_background("AH_BALL", 4, s_max=10.0, n_points=801)
    R = compute_curvature(h).scalar
    assert np.max(np.abs(R[1:-1] + 20.0)) <= 1e-8


@pytest.mark.parametrize("kwargs", [
    dict(family="AH_BALL", m=1, s_max=8.0, n_points=401),
    dict(family="AH_BALL", m=3, s_max=-8.0, n_points=401),
    dict(family="AH_BALL", m=3, kappa=0, s_max=8.0, n_points=401),
    dict(family="CLOSED", m=2, kappa=2, n_points=101),
])
def test_build_background_errors(kwargs):
    with pytest.raises(GridError):
        build_background(**kwargs)


def test_pole_regularity_of_backgrounds_and_perturbations():
    for g in (build_background("AH_BALL", 3, s_max=8.0, n_points=201),
              build_background("CLOSED", 2, n_points=101)):
        assert g.pole_regularity_defect() == 0.0
        assert np.all(g.a > 0) and np.all(g.b[1:-1] > 0)


def test_ah_asymptotics_of_background():
    h = build_background("AH_BALL", 3, s_max=12.0, n_points=601)
    far = h.s > 10
    # in the s coordinate conformal compactness means a -> 1 and b e^{-s} -> 1/2
    np.testing.assert_allclose(h.a[far], 1.0)
    lim = h.b[far] * np.exp(-h.s[far])
    assert np.all(np.abs(lim - 0.5) < 1e-8)


def test_metric_from_profiles_rejects_degenerate():
    h = build_background("AH_BALL", 3, s_max=4.0, n_points=41)
    with pytest.raises(DegenerateMetricError):
        metric_from_profiles(h, -np.ones(41), np.sinh(h.s))
    b = np.sinh(h.s)
    b[5] = -1.0
    with pytest.raises(DegenerateMetricError):
        metric_from_profiles(h, np.ones(41), b)


def test_perturbed_adds_log_fields():
    h = build_background("AH_BALL", 3, s_max=4.0, n_points=41)
    g = perturbed(h, 0.1 * np.ones(41), None)
    np.testing.assert_allclose(g.a, np.exp(0.1))
