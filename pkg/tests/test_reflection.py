import dataclasses

import numpy as np
import pytest

from actris import circuit
from actris.reflection import (
    ElementFits,
    FitParams,
    amplitude_from_normalized,
    approx_amplitude_bounds,
    exact_bound_curves,
    fit_amplitude_model,
    reflection_vector,
)

TWO_PI = 2.0 * np.pi


def scalar_reflection(fit, phi, alpha_bar):
    """Independent elementwise evaluation of the reflection coefficient."""
    lo, up = approx_amplitude_bounds(fit, phi)
    return (lo + alpha_bar * (up - lo)) * np.exp(1j * phi)


class TestFit:
    def test_passive_class_collapses_to_one_curve(self, passive_fit):
        assert passive_fit.delta_min == passive_fit.beta_min
        assert passive_fit.delta_max == passive_fit.beta_max

    def test_reference_peak_amplification(self, active_fit):
        assert active_fit.beta_max == pytest.approx(30.0, rel=0.05)

    def test_min_power_peak_amplitude(self, active_fit):
        # reported max of the lower curve is 1.38
        assert active_fit.delta_max == pytest.approx(1.38, rel=0.02)

    def test_passive_peak_value(self, passive_fit):
        assert passive_fit.beta_max == pytest.approx(0.99, rel=0.02)

    def test_fit_tightness_on_soft_diode_set(self, params_fig2):
        phis, lower, upper = exact_bound_curves(params_fig2, "active")
        fit = fit_amplitude_model(params_fig2, "active")
        ap_lo, ap_up = approx_amplitude_bounds(fit, phis)
        ok = np.isfinite(upper)
        err_up = np.nanmax(np.abs(ap_up - upper)[ok]) / (fit.beta_max - fit.beta_min)
        err_lo = np.nanmax(np.abs(ap_lo - lower)[ok]) / (fit.delta_max - fit.delta_min)
        assert err_up <= 0.10
        assert err_lo <= 0.10

    def test_grid_floor(self, params_va):
        with pytest.raises(ValueError):
            fit_amplitude_model(params_va, "active", grid_size=100)

    def test_serialization_roundtrip(self, active_fit):
        d = active_fit.to_dict()
        assert set(d) == {"delta_min", "delta_max", "beta_min", "beta_max", "theta_rad"}
        assert FitParams.from_dict(d) == active_fit


class TestApproxBounds:
    def test_peak_phase(self, active_fit):
        lo, up = approx_amplitude_bounds(active_fit, -active_fit.theta)
        assert lo == pytest.approx(active_fit.delta_max, abs=1e-12)
        assert up == pytest.approx(active_fit.beta_max, abs=1e-12)

    def test_trough_phase(self, active_fit):
        lo, up = approx_amplitude_bounds(active_fit, -active_fit.theta + np.pi)
        assert lo == pytest.approx(active_fit.delta_min, abs=1e-12)
        assert up == pytest.approx(active_fit.beta_min, abs=1e-12)

    def test_interior_values_bounded(self, active_fit):
        rng = np.random.default_rng(8)
        for phi in rng.uniform(0.0, TWO_PI, 100):
            lo, up = approx_amplitude_bounds(active_fit, phi)
            assert active_fit.delta_min - 1e-12 <= lo <= active_fit.delta_max + 1e-12
            assert active_fit.beta_min - 1e-12 <= up <= active_fit.beta_max + 1e-12


class TestNormalizedAmplitude:
    def test_endpoints_and_midpoint(self, active_fit):
        phi = 1.1
        lo, up = approx_amplitude_bounds(active_fit, phi)
        assert amplitude_from_normalized(active_fit, phi, 0.0) == pytest.approx(lo)
        assert amplitude_from_normalized(active_fit, phi, 1.0) == pytest.approx(up)
        assert amplitude_from_normalized(active_fit, phi, 0.5) == pytest.approx(0.5 * (lo + up))

    def test_monotone_in_control(self, active_fit):
        rng = np.random.default_rng(12)
        for phi in rng.uniform(0.0, TWO_PI, 25):
            vals = amplitude_from_normalized(active_fit, phi, np.linspace(0, 1, 33))
            assert np.all(np.diff(vals) >= -1e-15)

    def test_rejects_out_of_range_control(self, active_fit):
        with pytest.raises(ValueError):
            amplitude_from_normalized(active_fit, 0.3, 1.2)


class TestReflectionVector:
    def test_matches_scalar_form(self, active_fit, passive_fit):
        rng = np.random.default_rng(17)
        mask = np.ones(12, dtype=bool)
        mask[[2, 5]] = False
        fits = ElementFits.from_classes(active_fit, passive_fit, mask)
        for _ in range(1000):
            phi = rng.uniform(0.0, TWO_PI, 12)
            ab = rng.uniform(0.0, 1.0, 12)
            vec = reflection_vector(phi, ab, fits)
            for i in range(12):
                fit = active_fit if mask[i] else passive_fit
                ref = scalar_reflection(fit, phi[i], ab[i])
                assert abs(vec[i] - ref) <= 1e-12 * max(1.0, abs(ref))

    def test_passive_entries_ignore_amplitude_control(self, active_fit, passive_fit):
        rng = np.random.default_rng(19)
        mask = np.zeros(6, dtype=bool)
        mask[[0, 3]] = True
        fits = ElementFits.from_classes(active_fit, passive_fit, mask)
        phi = rng.uniform(0.0, TWO_PI, 6)
        ab1 = rng.uniform(0.0, 1.0, 6)
        ab2 = ab1.copy()
        ab2[~mask] = rng.uniform(0.0, 1.0, 4)
        v1 = reflection_vector(phi, ab1, fits)
        v2 = reflection_vector(phi, ab2, fits)
        assert np.array_equal(v1[~mask], v2[~mask])
        assert np.array_equal(v1[mask], v2[mask])

    def test_full_gain_at_peak_phase(self, active_fit, passive_fit):
        fits = ElementFits.from_classes(active_fit, passive_fit, np.ones(4, dtype=bool))
        phi = np.full(4, -active_fit.theta % TWO_PI)
        vec = reflection_vector(phi, np.ones(4), fits)
        assert np.allclose(np.abs(vec), active_fit.beta_max, atol=1e-9)

    def test_length_mismatch(self, fits_all_active):
        with pytest.raises(ValueError):
            reflection_vector(np.zeros(3), np.zeros(3), fits_all_active)
