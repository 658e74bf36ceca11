import numpy as np
import pytest

from horizonlab.currents import killing_T
from horizonlab.diagnostics import (
    HorizonSeries,
    aretakis_series,
    blowup_slope,
    expected_blowup_exponent,
    fit_power_law,
    hardy_check,
    is_generic,
    late_window,
    observed_order,
    poincare_check,
    pseudo_aretakis_series,
)
from horizonlab.evolution import HorizonTrace
from horizonlab.horizon_calculus import derive_conservation_law


def synthetic_trace(t, columns):
    radial = np.column_stack(columns)
    return HorizonTrace(t, radial, np.zeros_like(t))


def test_fit_recovers_exact_power_law():
    t = np.linspace(1.0, 200.0, 2000)
    fit = fit_power_law(HorizonSeries(t, 3.0 * t**-2))
    assert fit.window == late_window(200.0) == (100.0, 180.0)
    assert fit.exponent == pytest.approx(-2.0, abs=1e-12)
    assert np.exp(fit.intercept) == pytest.approx(3.0, rel=1e-10)
    assert fit.residual < 1e-12
    assert fit(150.0) == pytest.approx(3.0 * 150.0**-2)


def test_fit_reports_sign_change_segments():
    t = np.linspace(1.0, 100.0, 1000)
    y = np.where(t < 70.0, t**-1, -(t**-3))
    fit = fit_power_law(HorizonSeries(t, y))
    assert fit.sign_changes == 1
    assert fit.segments[0].exponent == pytest.approx(-1.0, abs=1e-10)
    assert fit.segments[1].exponent == pytest.approx(-3.0, abs=1e-10)


def test_fit_rejects_bad_windows():
    s = HorizonSeries(np.linspace(1.0, 10.0, 50), np.ones(50))
    with pytest.raises(ValueError):
        fit_power_law(s, (0.0, 5.0))
    with pytest.raises(ValueError):
        fit_power_law(s, (5.0, 20.0))
    with pytest.raises(ValueError):
        fit_power_law(HorizonSeries(s.times, np.zeros(50)))
    with pytest.raises(ValueError):
        HorizonSeries(np.array([1.0, 1.0]), np.zeros(2))


def test_observed_order():
    h = np.array([0.4, 0.2, 0.1, 0.05])
    slope, pairwise = observed_order(h, 5.0 * h**2)
    assert slope == pytest.approx(2.0)
    np.testing.assert_allclose(pairwise, 2.0)
    with pytest.raises(ValueError):
        observed_order(h, np.zeros(4))


def test_aretakis_series_of_exact_charge():
    """``∂_rψ + ψ`` is constant when ``∂_rψ = 0.7 - ψ`` with ψ decaying."""
    t = np.linspace(0.0, 50.0, 501)
    psi = 1.0 / (1.0 + t)
    trace = synthetic_trace(t, [psi, 0.7 - psi])
    series = aretakis_series(trace, derive_conservation_law(0))
    np.testing.assert_allclose(series.values, 0.7)
    assert series.max_drift < 1e-15
    assert is_generic(derive_conservation_law(0), trace)
    zero = synthetic_trace(t, [psi, -psi])
    assert not is_generic(derive_conservation_law(0), zero)
    with pytest.raises(ValueError):
        aretakis_series(trace, derive_conservation_law(1))


def test_pseudo_charge_uses_mass(subextreme):
    t = np.linspace(0.0, 1.0, 3)
    trace = synthetic_trace(t, [np.ones(3), np.full(3, 2.0)])
    np.testing.assert_allclose(pseudo_aretakis_series(subextreme, trace).values, 3.0)


def test_blowup_slope_of_synthetic_growth():
    t = np.linspace(0.0, 400.0, 4001)
    trace = synthetic_trace(t, [1 / (1 + t), np.full_like(t, 0.5), 0.5 * (1 + t), 0.1 * (1 + t) ** 2])
    assert expected_blowup_exponent(0, 2) == 1
    assert expected_blowup_exponent(1, 3) == 1
    assert blowup_slope(trace, 0, 2).exponent == pytest.approx(1.0, abs=5e-3)
    assert blowup_slope(trace, 0, 3).exponent == pytest.approx(2.0, abs=1e-2)
    with pytest.raises(ValueError):
        blowup_slope(trace, 0, 4)


def test_hardy_first_closed_form(extreme):
    """For ψ = e^{-x}, x = r - r_+: ∫ψ² = 1/2 and 4∫x²ψ'² = 1."""
    r = np.linspace(1.0, 41.0, 400_001)
    x = r - 1.0
    check = hardy_check(extreme, (r, np.exp(-x), -np.exp(-x)))
    assert check.ratio == pytest.approx(0.5, abs=1e-6)
    assert check.holds


def test_hardy_first_warns_without_decay(extreme):
    r = np.linspace(1.0, 3.0, 100)
    with pytest.warns(UserWarning):
        hardy_check(extreme, (r, np.ones_like(r), np.zeros_like(r)))


@pytest.mark.parametrize("which", ["second", "third"])
def test_other_hardy_forms_hold(extreme, which):
    r = np.linspace(1.0, 3.0, 20_001)
    for psi, dpsi in [(np.cos(3 * r), -3 * np.sin(3 * r)), (np.exp(-(r - 1)), -np.exp(-(r - 1))), (r**2, 2 * r)]:
        assert hardy_check(extreme, (r, psi, dpsi), which).holds


def test_hardy_zero_field(extreme):
    r = np.linspace(1.0, 3.0, 10)
    check = hardy_check(extreme, (r, 0 * r, 0 * r))
    assert check.ratio == 0.0 and check.holds


def test_poincare():
    r = np.linspace(1.0, 5.0, 50)
    single = poincare_check({2: np.sin(r)}, 2, r)
    assert single.holds and single.max_relative_gap < 1e-12
    mixed = poincare_check({2: np.sin(r) + 2, 3: np.cos(r) + 2}, 2, r)
    assert mixed.holds and np.all(mixed.lhs < mixed.rhs)
    with pytest.raises(ValueError):
        poincare_check({1: np.ones(50)}, 2, r)
    assert poincare_check({0: np.zeros(50), 2: np.ones(50)}, 2, r).holds


def test_energy_timeseries_of_zero_run(extreme):
    from horizonlab.diagnostics import energy_timeseries
    from horizonlab.evolution import EvolutionConfig, InitialDataSpec, RadialGrid, evolve

    grid = RadialGrid.covering(1.0, 14.0, 0.2, 0.3)
    spec = InitialDataSpec(l=0, amplitude=0.0)
    result = evolve(extreme, grid, spec, EvolutionConfig(t_final=2.0))
    series, fit = energy_timeseries(extreme, result, killing_T(extreme))
    assert np.all(series.values == 0) and fit is None
