import dataclasses
import json

import numpy as np
import pytest
import yaml

from actris.channel import ScenarioConfig, dbm_to_watt
from actris.errors import ConfigError
from actris.harness import (
    CSV_HEADER,
    ExperimentSpec,
    SchemeVariant,
    export_csv,
    fig_presets,
    load_config,
    load_design,
    n_full_power,
    parse_csv,
    run_experiment,
    save_design,
    spec_from_dict,
    summarize,
    trial_channels,
    _scenario_for,
)


def small_spec(**overrides):
    base = dict(
        scenario=ScenarioConfig(m_t=2, m_r=2, d=2, n=8, n_act=8, p_ris_w=0.19).with_rho_db(-30.0),
        sweep_kind="rho_db",
        sweep_values=(-30.0, -20.0),
        variants=(SchemeVariant("DO", "DO"), SchemeVariant("PAIDO", "PAIDO")),
        trials=3,
    )
    base.update(overrides)
    return ExperimentSpec(**base)


class TestConfig:
    def test_empty_file_yields_reference_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        spec = load_config(path)
        ref = ScenarioConfig()
        assert spec.scenario.m_t == ref.m_t == 8
        assert spec.scenario.n == ref.n == 64
        assert spec.scenario.p_t_w == pytest.approx(dbm_to_watt(-12.75))
        assert spec.scenario.p_ris_w == 1.5
        assert spec.scenario.f_r == pytest.approx(10.0 ** 0.7)
        assert spec.scenario.d_ris_tx_m == 40.0
        assert spec.scenario.rho_db == pytest.approx(-30.0, abs=0.1)

    def test_rho_sweep_backsolves_transmit_power(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump({
            "sweep": {"kind": "rho_db", "values": [-40, -20]},
            "schemes": ["DO"],
        }))
        spec = load_config(path)
        for value in spec.sweep_values:
            scenario, _ = _scenario_for(spec, spec.variants[0], value)
            assert scenario.rho_db == pytest.approx(value, abs=1e-9)

    def test_stream_count_validation(self):
        with pytest.raises(ConfigError):
            spec_from_dict({"m_t": 4, "m_r": 4, "d": 5})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            spec_from_dict({"p_t": -12.75})

    def test_unknown_circuit_key_rejected(self):
        with pytest.raises(ConfigError):
            spec_from_dict({"circuit": {"l1": 4.5}})

    def test_duplicate_unit_forms_rejected(self):
        with pytest.raises(ConfigError):
            spec_from_dict({"p_t_dbm": -12.75, "p_t_w": 1e-4})

    def test_unit_suffixed_circuit_keys(self):
        spec = spec_from_dict({"circuit": {"l1_nh": 4.5, "c_lo_pf": 0.1, "c_hi_pf": 100.0}})
        assert spec.scenario.circuit.l1 == pytest.approx(4.5e-9)
        assert spec.scenario.circuit.c_range == (0.1e-12, 100e-12)

    def test_unknown_scheme_rejected(self):
        with pytest.raises(ConfigError):
            spec_from_dict({"schemes": ["AO", "SA"]})


class TestDeterminism:
    def test_identical_runs_identical_csv(self, tmp_path):
        spec = small_spec()
        rows_a = run_experiment(spec)
        rows_b = run_experiment(spec)
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        export_csv(rows_a, pa)
        export_csv(rows_b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_thread_count_does_not_change_bytes(self, tmp_path):
        spec1 = small_spec(threads=1)
        spec4 = small_spec(threads=4)
        pa, pb = tmp_path / "t1.csv", tmp_path / "t4.csv"
        export_csv(run_experiment(spec1), pa)
        export_csv(run_experiment(spec4), pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_channels_shared_across_schemes(self):
        spec = small_spec()
        sc, _ = _scenario_for(spec, spec.variants[0], -30.0)
        ch1, mask1 = trial_channels(sc, sc.seed, 0, 1)
        ch2, mask2 = trial_channels(sc, sc.seed, 0, 1)
        assert np.array_equal(ch1.h_1, ch2.h_1)
        assert np.array_equal(ch1.h_2, ch2.h_2)
        assert np.array_equal(mask1, mask2)
        ch3, _ = trial_channels(sc, sc.seed, 0, 2)
        assert not np.array_equal(ch1.h_1, ch3.h_1)

    def test_every_task_emits_each_scheme_once(self):
        spec = small_spec()
        rows = run_experiment(spec)
        seen = {}
        for r in rows:
            key = (r.sweep_value, r.trial, r.scheme)
            seen[key] = seen.get(key, 0) + 1
        assert all(v == 1 for v in seen.values())
        assert len(seen) == len(spec.sweep_values) * spec.trials * len(spec.variants)


class TestCsv:
    def test_header_is_pinned(self):
        assert CSV_HEADER == (
            "trial,scheme,sweep_value,rate_bps_hz,ris_power_w,tx_power_w,"
            "iterations_used,wall_ms,seed"
        )

    def test_roundtrip(self, tmp_path):
        spec = small_spec(trials=2)
        rows = run_experiment(spec)
        path = tmp_path / "rows.csv"
        export_csv(rows, path)
        back = parse_csv(path)
        assert back == rows

    def test_wall_ms_zero_without_timing_flag(self):
        rows = run_experiment(small_spec(trials=1))
        assert all(r.wall_ms == 0.0 for r in rows)

    def test_summary_hand_check(self):
        from actris.harness import ResultRow

        rows = [
            ResultRow(0, "DO", -30.0, 10.0, 0.1, 1e-4, 1, 0.0, 0),
            ResultRow(1, "DO", -30.0, 14.0, 0.1, 1e-4, 1, 0.0, 0),
            ResultRow(2, "DO", -30.0, 12.0, 0.1, 1e-4, 1, 0.0, 0),
        ]
        (entry,) = summarize(rows)
        assert entry["mean_rate_bps_hz"] == pytest.approx(12.0)
        assert entry["stderr_rate_bps_hz"] == pytest.approx(2.0 / np.sqrt(3.0))

    def test_summary_of_constant_column(self):
        from actris.harness import ResultRow

        rows = [ResultRow(i, "DO", -30.0, 5.0, 0.1, 1e-4, 1, 0.0, 0) for i in range(4)]
        (entry,) = summarize(rows)
        assert entry["stderr_rate_bps_hz"] == 0.0


class TestPresets:
    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            fig_presets("fig9")

    def test_full_power_element_count(self):
        from actris.circuit import CircuitParams

        assert n_full_power(0.9, CircuitParams()) in (33, 34, 35)

    def test_fig7_activity_rules(self):
        spec = fig_presets("fig7", scale="desk")
        assert spec.sweep_kind == "n_elements"
        labels = [v.label for v in spec.variants]
        assert len(labels) == 3
        sc_all, _ = _scenario_for(spec, spec.variants[0], 144.0)
        sc_12, _ = _scenario_for(spec, spec.variants[1], 144.0)
        sc_14, _ = _scenario_for(spec, spec.variants[2], 144.0)
        nfp = n_full_power(0.9, spec.scenario.circuit)
        assert sc_12.n_act == int(1.2 * nfp)
        assert sc_14.n_act == int(1.4 * nfp)
        # all-active caps at the number the budget can hold at minimum power
        assert sc_all.n_act < 144
        from actris.circuit import CircuitParams, power_consumption, stable_resistance

        p_min = power_consumption(stable_resistance(3.0, spec.scenario.circuit), spec.scenario.circuit)
        assert sc_all.n_act == int(0.9 // p_min)
        # below the threshold every element stays active
        sc_small, _ = _scenario_for(spec, spec.variants[1], 16.0)
        assert sc_small.n_act == 16

    def test_fig6_fraction_variants(self):
        spec = fig_presets("fig6", scale="desk")
        assert spec.sweep_kind == "p_ris_w"
        fractions = [v.n_act_fraction for v in spec.variants]
        assert fractions == [0.7, 0.8, 0.9, 1.0]
        sc, _ = _scenario_for(spec, spec.variants[0], spec.sweep_values[0])
        assert sc.n_act == int(0.7 * sc.n)

    def test_fig3_two_initializations(self):
        spec = fig_presets("fig3", scale="desk")
        assert spec.sweep_kind == "j_alt"
        assert {v.scheme for v in spec.variants} == {"AO", "AO-random-init"}
        _, j_alt = _scenario_for(spec, spec.variants[0], 4.0)
        assert j_alt == 4

    def test_fig2_is_curve_export(self):
        spec = fig_presets("fig2", scale="desk")
        assert spec.kind == "curves"
        assert spec.scenario.circuit.r0 == 0.5

    def test_paper_scale_dimensions(self):
        spec = fig_presets("fig4", scale="paper")
        assert spec.scenario.m_t == 8
        assert spec.scenario.n == 64
        assert spec.trials == 200

    @pytest.mark.parametrize("name", ["fig3", "fig5", "fig6", "fig7"])
    def test_presets_run_clean(self, name):
        spec = fig_presets(name, scale="desk", seed=3)
        spec = dataclasses.replace(spec, trials=1, threads=1,
                                   sweep_values=spec.sweep_values[:1])
        rows = run_experiment(spec)
        assert rows
        assert all(not r.error for r in rows)


class TestDesignPersistence:
    def test_save_load_validate_roundtrip(self, tmp_path, fits_all_active, scenario_desk):
        from actris.do import run_do

        rng = np.random.default_rng(3)
        from actris.channel import sample_channels

        ch = sample_channels(scenario_desk, rng)
        res = run_do(scenario_desk, ch, fits_all_active, rng)
        path = tmp_path / "design.json"
        save_design(path, res.design, res.v)
        design, v = load_design(path)
        assert np.allclose(design.gamma, res.design.gamma)
        assert np.allclose(v, res.v)
        assert design.ris_power_w == pytest.approx(res.design.ris_power_w)


class TestCli:
    def test_fit_model_emits_coefficient_keys(self, tmp_path, capsys):
        from actris.cli import main

        out = tmp_path / "fits.yaml"
        assert main(["fit-model", "--out", str(out)]) == 0
        data = yaml.safe_load(out.read_text())
        assert set(data) == {"active", "passive"}
        assert set(data["active"]) == {
            "delta_min", "delta_max", "beta_min", "beta_max", "theta_rad"
        }

    def test_run_and_exit_codes(self, tmp_path, capsys):
        from actris.cli import main

        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(yaml.safe_dump({
            "m_t": 2, "m_r": 2, "d": 2, "n_elements": 8, "p_ris_w": 0.19,
            "rho_db": -30.0, "trials": 2, "schemes": ["DO"],
        }))
        out = tmp_path / "rows.csv"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        assert out.read_text().startswith(CSV_HEADER)

        bad = tmp_path / "bad.yaml"
        bad.write_text(yaml.safe_dump({"nonsense_key": 1}))
        assert main(["run", "--config", str(bad)]) == 2
        assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2

    def test_validate_subcommand(self, tmp_path, capsys, fits_all_active, scenario_desk):
        from actris.channel import sample_channels
        from actris.cli import main
        from actris.do import run_do

        rng = np.random.default_rng(5)
        ch = sample_channels(scenario_desk, rng)
        res = run_do(scenario_desk, ch, fits_all_active, rng)
        path = tmp_path / "design.json"
        save_design(path, res.design, res.v)
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(yaml.safe_dump({
            "m_t": 4, "m_r": 4, "d": 4, "n_elements": 16, "p_ris_w": 0.375,
            "rho_db": -30.0,
        }))
        assert main(["validate", "--design", str(path), "--config", str(cfg)]) == 0

        # corrupt the design so the surface power budget is violated
        payload = json.loads(path.read_text())
        payload["ris_power_w"] = 99.0
        path.write_text(json.dumps(payload))
        assert main(["validate", "--design", str(path), "--config", str(cfg)]) == 3

    def test_preset_fig2_writes_curves(self, tmp_path, capsys):
        from actris.cli import main

        out = tmp_path / "curves.csv"
        assert main(["preset", "--name", "fig2", "--out", str(out)]) == 0
        header = out.read_text().splitlines()[0]
        assert header == "phi_rad,exact_lower,exact_upper,approx_lower,approx_upper"
