import math

import numpy as np
import pytest
import sympy as sp

from horizonlab.geometry import (
    BlackHoleBackground,
    ChartPoint,
    DomainError,
    SliceGeometry,
    chart_convert,
    metric_potential,
    photon_sphere,
    radial_drift,
    surface_gravity,
    tortoise,
    tortoise_inverse,
    wave_operator_coefficients,
)


def test_extreme_horizons_coincide(extreme):
    assert extreme.extreme
    assert extreme.r_plus == extreme.r_minus == 1.0
    assert surface_gravity(extreme) == 0.0
    assert photon_sphere(extreme) == pytest.approx(2.0, abs=1e-15)


def test_subextreme_horizons(subextreme):
    assert not subextreme.extreme
    assert subextreme.r_plus == pytest.approx(1.6)
    assert subextreme.r_minus == pytest.approx(0.4)
    assert surface_gravity(subextreme) == pytest.approx((1.6 - 0.4) / (2 * 1.6**2))
    assert metric_potential(subextreme, subextreme.r_plus) == pytest.approx(0.0, abs=1e-15)


def test_schwarzschild_limit():
    bg = BlackHoleBackground.from_ratio(1.0, 0.0)
    assert bg.r_plus == 2.0 and bg.r_minus == 0.0
    assert photon_sphere(bg) == pytest.approx(3.0)
    assert surface_gravity(bg) == pytest.approx(0.25)
    with pytest.raises(DomainError):
        surface_gravity(bg, "inner")


def test_charge_ratio_validated():
    with pytest.raises(DomainError, match=r"charge_ratio must lie in \[0,1\]"):
        BlackHoleBackground.from_ratio(1.0, 1.2)
    with pytest.raises(DomainError):
        BlackHoleBackground(mass=-1.0)


@pytest.mark.parametrize("ratio", [1.0, 0.8, 0.3])
def test_metric_potential_derivatives_match_sympy(ratio):
    bg = BlackHoleBackground.from_ratio(1.0, ratio)
    x = sp.Symbol("x", positive=True)
    D = 1 - 2 * bg.mass / x + bg.charge**2 / x**2
    for order in range(0, 6):
        expr = sp.lambdify(x, sp.diff(D, x, order))
        for radius in (bg.r_plus, 1.7, 5.0):
            assert metric_potential(bg, radius, order) == pytest.approx(expr(radius), rel=1e-12, abs=1e-14)


def test_extreme_potential_has_double_root(extreme):
    assert metric_potential(extreme, 1.0) == 0.0
    assert metric_potential(extreme, 1.0, 1) == 0.0
    assert metric_potential(extreme, 1.0, 2) == pytest.approx(2.0)


def test_photon_sphere_is_critical_point_of_potential():
    for ratio in (0.0, 0.5, 0.8, 1.0):
        bg = BlackHoleBackground.from_ratio(1.0, ratio)
        q = photon_sphere(bg)
        # (D / r^2)' = 0  <=>  r D' = 2 D
        assert q * metric_potential(bg, q, 1) == pytest.approx(2 * metric_potential(bg, q), abs=1e-13)


@pytest.mark.parametrize("ratio", [1.0, 0.8])
def test_tortoise_normalisation_and_derivative(ratio):
    bg = BlackHoleBackground.from_ratio(1.0, ratio)
    assert tortoise(bg, photon_sphere(bg)) == pytest.approx(0.0, abs=1e-13)
    r = np.array([bg.r_plus + 0.05, 2.5, 7.0, 40.0])
    h = 1e-6
    numeric = (tortoise(bg, r + h) - tortoise(bg, r - h)) / (2 * h)
    np.testing.assert_allclose(numeric, 1.0 / metric_potential(bg, r), rtol=1e-7)


def test_tortoise_diverges_inverse_linearly_at_extreme_horizon(extreme):
    x = np.array([1e-3, 1e-4, 1e-5])
    rstar = tortoise(extreme, 1.0 + x)
    np.testing.assert_allclose(rstar * x, -1.0, rtol=0.05)
    with pytest.raises(DomainError):
        tortoise(extreme, 1.0)


@pytest.mark.parametrize("ratio", [1.0, 0.8])
def test_tortoise_inverse_round_trip(ratio):
    bg = BlackHoleBackground.from_ratio(1.0, ratio)
    r = np.array([bg.r_plus + 1e-6, bg.r_plus + 0.3, 3.0, 50.0])
    np.testing.assert_allclose(tortoise_inverse(bg, tortoise(bg, r)), r, rtol=1e-12)


def test_chart_round_trips(extreme):
    p = ChartPoint("tstar_r", 3.0, 2.5)
    for target in ("t_r", "t_rstar", "v_r", "u_v"):
        back = chart_convert(extreme, chart_convert(extreme, p, target), "tstar_r")
        assert back.a == pytest.approx(p.a, abs=1e-10)
        assert back.b == pytest.approx(p.b, abs=1e-10)


def test_horizon_points_have_no_exterior_coordinates(extreme):
    on_horizon = ChartPoint("v_r", 0.0, 1.0)
    assert chart_convert(extreme, on_horizon, "tstar_r").a == -1.0
    with pytest.raises(DomainError):
        chart_convert(extreme, on_horizon, "t_r")
    with pytest.raises(DomainError):
        chart_convert(extreme, ChartPoint("v_r", 0.0, 0.5), "tstar_r")


def test_slice_normal_is_unit_and_future_directed(extreme):
    s = SliceGeometry.at(extreme, np.linspace(1.0, 20.0, 50))
    np.testing.assert_allclose(s.normal_norm(extreme), -1.0, rtol=1e-14)
    assert np.all(s.n_v > 0)
    np.testing.assert_allclose(s.volume**2, 2.0 - metric_potential(extreme, s.r), rtol=1e-14)


def test_tstar_chart_operator_matches_vr_chart(extreme):
    """Transform the (v, r) operator to (t*, r) by the chain rule."""
    r0, l = 1.7, 2
    vr = wave_operator_coefficients(extreme, "v_r", r0, l)
    ts = wave_operator_coefficients(extreme, "tstar_r", r0, l)
    # ∂_v = ∂_t and ∂_r|_v = ∂_r|_t - ∂_t
    D = vr["psi_rr"]
    expect = {
        "psi_tt": D - vr["psi_vr"],
        "psi_tr": vr["psi_vr"] - 2.0 * D,
        "psi_rr": D,
        "psi_t": vr["psi_v"] - vr["psi_r"],
        "psi_r": vr["psi_r"],
        "psi": vr["psi"],
    }
    for key, value in expect.items():
        assert ts[key] == pytest.approx(value, abs=1e-14), key


def test_radial_drift(extreme):
    r = 3.0
    D = metric_potential(extreme, r)
    assert radial_drift(extreme, r) == pytest.approx(metric_potential(extreme, r, 1) + 2 * D / r)
    assert radial_drift(extreme, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert math.isfinite(radial_drift(extreme, 1e3))
