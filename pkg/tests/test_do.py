import dataclasses

import numpy as np
import pytest

from actris.channel import ScenarioConfig, effective_channel, sample_channels, spectral_efficiency
from actris.do import (
    cascade_norm_objective,
    do_amplitude_max,
    do_phase_opt,
    run_do,
    svd_precoder_combiner,
    waterfill,
)
from actris.ao import _power_fit_arrays, rmo_phase_opt, run_ao, init_from_design
from actris.constraints import validate_design
from actris.errors import InfeasibleBudgetError
from actris.reflection import ElementFits
from conftest import desk_scenario
from test_channel import random_channels

TWO_PI = 2.0 * np.pi


class TestWaterfill:
    def test_single_stream_gets_everything(self):
        assert waterfill(np.array([3.0]), 2.5)[0] == pytest.approx(2.5, abs=1e-12)

    def test_equal_gains_split_evenly(self):
        p = waterfill(np.full(4, 2.0), 1.0)
        assert np.allclose(p, 0.25, atol=1e-10)

    def test_disparate_gains_low_budget(self):
        gains = np.array([10.0, 0.01])
        p = waterfill(gains, 0.05)
        assert p[1] == 0.0
        assert p[0] == pytest.approx(0.05, abs=1e-12)

    def test_matches_grid_enumeration(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            gains = rng.uniform(0.01, 10.0, 3)
            p_t = rng.uniform(0.1, 5.0)
            p = waterfill(gains, p_t)
            assert p.sum() == pytest.approx(p_t, abs=1e-8)

            def rate(alloc):
                return np.sum(np.log2(1.0 + gains * alloc))

            # grid enumeration over the simplex
            best = 0.0
            g1 = np.linspace(0, p_t, 1000)
            for a in g1:
                rest = p_t - a
                b = np.linspace(0, rest, 200)
                vals = (
                    np.log2(1 + gains[0] * a)
                    + np.log2(1 + gains[1] * b)
                    + np.log2(1 + gains[2] * (rest - b))
                )
                best = max(best, vals.max())
            assert rate(p) >= best - 1e-6

    def test_zero_gains(self):
        assert np.all(waterfill(np.zeros(3), 1.0) == 0.0)

    def test_complementary_slackness(self):
        rng = np.random.default_rng(2)
        gains = rng.uniform(0.05, 5.0, 6)
        p_t = 0.8
        p = waterfill(gains, p_t)
        levels = p + 1.0 / gains
        eta = levels[p > 0].mean()
        assert np.allclose(levels[p > 0], eta, rtol=1e-6)
        assert np.all(1.0 / gains[p == 0.0] >= eta - 1e-9)


class TestSvdPrecoderCombiner:
    def _instance(self, seed, d=4):
        sc = ScenarioConfig(m_t=4, m_r=4, d=d, n=8, n_act=8, p_t_w=1.0,
                            sigma2_w=1e-3, f_r=2.0, f_s=1.5)
        rng = np.random.default_rng(seed)
        ch = random_channels(rng, 4, 4, 8)
        gamma = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        return sc, ch, gamma

    def test_diagonalization(self):
        sc, ch, gamma = self._instance(3)
        v, w, gains, powers = svd_precoder_combiner(ch, gamma, sc)
        heff = effective_channel(ch, gamma)
        prod = w.conj().T @ heff @ (v / np.sqrt(powers[powers > 0.0])[None, :])
        off = prod - np.diag(np.diag(prod))
        assert np.linalg.norm(off) / np.linalg.norm(prod) < 1e-9

    def test_zero_surface_zero_rate(self):
        sc, ch, _ = self._instance(4)
        v, w, gains, powers = svd_precoder_combiner(ch, np.zeros(8), sc)
        assert np.all(gains == 0.0)
        assert spectral_efficiency(ch, v, w, np.zeros(8), sc) == 0.0

    def test_parallel_channel_rate_identity(self):
        # with the eigenmode precoder/combiner the full expression reduces to
        # the per-eigenchannel form
        sc, ch, gamma = self._instance(5)
        v, w, gains, powers = svd_precoder_combiner(ch, gamma, sc)
        keep = powers > 0.0
        expect = np.sum(np.log2(1.0 + gains[keep] * powers[keep]))
        got = spectral_efficiency(ch, v, w, gamma, sc)
        assert got == pytest.approx(expect, abs=1e-8)

    def test_transmit_power_budget(self):
        sc, ch, gamma = self._instance(6)
        v, _, _, powers = svd_precoder_combiner(ch, gamma, sc)
        assert np.trace(v.conj().T @ v).real == pytest.approx(sc.p_t_w, abs=1e-8)
        assert powers.sum() == pytest.approx(sc.p_t_w, abs=1e-8)


class TestDoPhaseOpt:
    def test_single_element_matches_grid(self, fits_all_active, active_fit, passive_fit):
        rng = np.random.default_rng(7)
        fits = ElementFits.from_classes(active_fit, passive_fit, np.ones(1, dtype=bool))
        sc = ScenarioConfig(m_t=2, m_r=2, d=1, n=1, n_act=1, p_t_w=1.0,
                            sigma2_w=1e-3, f_r=2.0, f_s=1.5)
        ch = random_channels(rng, 2, 2, 1, direct=True)
        obj = cascade_norm_objective(ch, fits, np.ones(1))
        grid = np.linspace(0, TWO_PI, 200_000, endpoint=False)
        gam = obj.z2 * np.exp(2j * grid) + obj.z1 * np.exp(1j * grid) + obj.z
        vals = (np.conj(gam) * (obj.t[0, 0] * gam)).real - 2 * (np.conj(gam) * obj.q[0]).real
        best = vals.min()
        worst = vals.max()
        cands = []
        for s in range(4):
            ph, trace = rmo_phase_opt(obj, np.array([np.exp(1j * s * np.pi / 2)]))
            cands.append(trace[-1])
        assert min(cands) <= best + 1e-3 * (worst - best)

    def test_descent_trace_nonincreasing(self, fits_all_active):
        rng = np.random.default_rng(8)
        sc = desk_scenario()
        ch = sample_channels(sc, rng)
        obj = cascade_norm_objective(ch, fits_all_active, np.ones(16))
        ph0 = np.exp(1j * rng.uniform(0, TWO_PI, 16))
        _, trace = rmo_phase_opt(obj, ph0)
        assert np.all(np.diff(trace) <= 1e-12 * np.maximum(1.0, np.abs(trace[:-1])))

    def test_beats_random_phases(self, fits_all_active):
        rng = np.random.default_rng(9)
        sc = desk_scenario()
        ch = sample_channels(sc, rng)
        phi_opt, _ = do_phase_opt(ch, fits_all_active, sc, np.exp(1j * rng.uniform(0, TWO_PI, 16)))
        lower, upper = fits_all_active.bounds(phi_opt)
        norm_opt = np.linalg.norm(
            effective_channel(ch, upper * np.exp(1j * phi_opt))
        )
        wins = 0
        for _ in range(100):
            phi = rng.uniform(0, TWO_PI, 16)
            _, up = fits_all_active.bounds(phi)
            if norm_opt >= np.linalg.norm(effective_channel(ch, up * np.exp(1j * phi))):
                wins += 1
        assert wins == 100


class TestDoAmplitudeMax:
    def test_ample_budget_hits_upper_bounds(self, params_va, fits_all_active):
        rng = np.random.default_rng(10)
        phi = rng.uniform(0, TWO_PI, 16)
        _, upper = fits_all_active.bounds(phi)
        alpha = do_amplitude_max(phi, fits_all_active, params_va, budget=1e6)
        assert np.allclose(alpha, upper, atol=1e-9)

    def test_greedy_matches_enumeration(self, params_va, active_fit, passive_fit):
        rng = np.random.default_rng(11)
        fits = ElementFits.from_classes(active_fit, passive_fit, np.ones(4, dtype=bool))
        for trial in range(5):
            phi = rng.uniform(0, TWO_PI, 4)
            p_min, slope, lower, upper = _power_fit_arrays(fits, phi, params_va)
            budget = p_min.sum() + rng.uniform(0.2, 0.8) * (slope @ (upper - lower))
            alpha = do_amplitude_max(phi, fits, params_va, budget=budget)
            assert p_min.sum() + slope @ (alpha - lower) <= budget + 1e-9
            grids = np.meshgrid(*[np.linspace(lower[i], upper[i], 25) for i in range(4)],
                                indexing="ij")
            pts = np.stack([g.ravel() for g in grids])
            cost = p_min.sum() + slope @ (pts - lower[:, None])
            feas = cost <= budget
            best = pts[:, feas].sum(axis=0).max()
            assert alpha.sum() >= best - 1e-6

    def test_marginal_budget_raises_cheapest_slope_first(self, params_va, fits_all_active):
        rng = np.random.default_rng(12)
        phi = rng.uniform(0, TWO_PI, 16)
        p_min, slope, lower, upper = _power_fit_arrays(fits_all_active, phi, params_va)
        cheapest = np.argmin(np.where(slope > 0, slope, np.inf))
        budget = p_min.sum() + slope[cheapest] * (upper[cheapest] - lower[cheapest])
        alpha = do_amplitude_max(phi, fits_all_active, params_va, budget=budget)
        assert alpha[cheapest] == pytest.approx(upper[cheapest], abs=1e-9)
        others = np.arange(16) != cheapest
        assert np.allclose(alpha[others], lower[others], atol=1e-9)

    def test_infeasible_budget(self, params_va, fits_all_active):
        rng = np.random.default_rng(13)
        phi = rng.uniform(0, TWO_PI, 16)
        with pytest.raises(InfeasibleBudgetError):
            do_amplitude_max(phi, fits_all_active, params_va, budget=1e-4)


class TestRunDo:
    def test_output_is_valid_and_feasible_init(self, fits_all_active, scenario_desk):
        rng = np.random.default_rng(14)
        ch = sample_channels(scenario_desk, rng)
        res = run_do(scenario_desk, ch, fits_all_active, rng)
        assert validate_design(scenario_desk, fits_all_active, res.v, res.design) == []
        init = init_from_design(scenario_desk, fits_all_active, res.v, res.design)
        ao_res = run_ao(scenario_desk, ch, fits_all_active, init, j_alt=2)
        assert ao_res.rate >= res.rate - 1e-9

    def test_stream_powers_meet_budget(self, fits_all_active, scenario_desk):
        rng = np.random.default_rng(15)
        ch = sample_channels(scenario_desk, rng)
        res = run_do(scenario_desk, ch, fits_all_active, rng)
        assert res.stream_powers.sum() == pytest.approx(scenario_desk.p_t_w, abs=1e-8)
