import dataclasses
import math

import pytest

from starv2x.errors import StarV2XError
from starv2x.params import (SimParams, apply_overrides, db_to_linear,
                            dbm_to_watt, default_params, linear_to_db,
                            load_config, manifest_hash, params_from_dict,
                            params_to_dict, save_config, watt_to_dbm)


class TestDefaults:
    def test_pathloss_exponent(self):
        assert default_params().pathloss_exp_delta == 4

    def test_rician_factor(self):
        assert default_params().rician_k == 10

    def test_noise_psd(self):
        assert default_params().noise_psd_dbm_hz == -174

    def test_population(self):
        p = default_params()
        assert p.n_vues_i == 20
        assert p.n_v2v_pairs_v == 6

    def test_rl_hyperparameters(self):
        p = default_params()
        assert p.discount_zeta == 0.98
        assert p.learning_rate == 0.001
        assert p.batch_size == 4
        assert p.eps_initial == 1.0
        assert p.eps_final == 0.02
        assert p.episodes == 1000

    def test_geometry(self):
        p = default_params()
        assert p.bs_position == (0.0, 0.0, 10.0)
        assert p.ris_position == (60.0, 10.0, 5.0)

    def test_power_budget_and_gains(self):
        p = default_params()
        assert p.p_i_max_db == 10
        assert p.ref_gain_eta_db == -40
        assert p.outage_threshold_gamma0_db == 4


class TestConversions:
    def test_db_round_trip(self):
        assert db_to_linear(10) == pytest.approx(10.0)
        assert db_to_linear(0) == 1.0
        assert linear_to_db(db_to_linear(7.3)) == pytest.approx(7.3)

    def test_dbm(self):
        assert dbm_to_watt(30) == pytest.approx(1.0)
        assert dbm_to_watt(0) == pytest.approx(1e-3)
        assert watt_to_dbm(dbm_to_watt(23)) == pytest.approx(23)

    def test_noise_power(self):
        # -174 dBm/Hz over 10 MHz -> -104 dBm = 10^(-13.4) W
        p = default_params()
        assert p.noise_power_sigma2_w == pytest.approx(10 ** (-13.4), rel=1e-12)


class TestDerived:
    def test_power_grid(self):
        p = default_params()
        grid = p.power_grid_w()
        assert len(grid) == p.power_levels_lp
        assert grid[0] == 0.0
        assert grid[-1] == pytest.approx(p.p_v_max_w)
        # uniform spacing k/(Lp-1) * P_max
        steps = [grid[k + 1] - grid[k] for k in range(len(grid) - 1)]
        for s in steps:
            assert s == pytest.approx(grid[1] - grid[0])

    def test_latency_rate_floor(self):
        p = default_params()
        assert p.latency_rate_floor_bps == pytest.approx(
            p.payload_d_bits / p.time_budget_tmax_s)


class TestValidation:
    def test_bad_probability(self):
        with pytest.raises((StarV2XError, ValueError)):
            dataclasses.replace(default_params(), outage_prob_p0=1.5)

    def test_bad_power_levels(self):
        with pytest.raises((StarV2XError, ValueError)):
            dataclasses.replace(default_params(), power_levels_lp=1)

    def test_bad_outage_sense(self):
        with pytest.raises((StarV2XError, ValueError)):
            dataclasses.replace(default_params(), outage_sense="sideways")

    def test_bad_groups(self):
        with pytest.raises((StarV2XError, ValueError)):
            dataclasses.replace(default_params(), element_groups=0)


class TestConfigIO:
    def test_round_trip_dict(self):
        p = default_params()
        assert params_from_dict(params_to_dict(p)) == p

    def test_round_trip_file(self, tmp_path):
        p = dataclasses.replace(default_params(), n_vues_i=7, rician_k=3.5)
        path = tmp_path / "cfg.txt"
        save_config(p, path)
        assert load_config(path) == p

    def test_overrides(self):
        p = apply_overrides(default_params(),
                            ["n_vues_i=5", "rician_k=2.5", "outage_sense=lower"])
        assert p.n_vues_i == 5
        assert p.rician_k == 2.5
        assert p.outage_sense == "lower"

    def test_override_unknown_key(self):
        with pytest.raises((StarV2XError, KeyError, ValueError)):
            apply_overrides(default_params(), ["no_such_knob=1"])

    def test_manifest_hash_sensitivity(self):
        p = default_params()
        q = dataclasses.replace(p, n_vues_i=p.n_vues_i + 1)
        assert manifest_hash(p) == manifest_hash(p)
        assert manifest_hash(p) != manifest_hash(q)
