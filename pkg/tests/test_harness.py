import dataclasses
import json
import os

import numpy as np
import pytest
from scipy import stats

from starv2x import harness
from starv2x.env import ActionTuple, V2XEnv, identity_action
from starv2x.errors import SpaceTooLarge
from starv2x.harness import (ALL_SCHEMES, CSV_COLUMNS, EpisodeRecord,
                             ExperimentManifest, RunResult, _mean_ci95,
                             _unflatten, aggregate_and_export,
                             brute_force_oracle, convergence_episode,
                             export_csv, run_algorithm1, run_scheme)
from starv2x.params import default_params
from starv2x.scenario import drop_scenario


def _tiny_params(**overrides):
    base = dict(n_vues_i=2, n_v2v_pairs_v=1, n_antennas_b=2, n_elements=4,
                element_groups=2, phase_bits_b=1, power_levels_lp=2,
                steps_per_episode=3, payload_d_bits=1e9)
    base.update(overrides)
    return dataclasses.replace(default_params(), **base)


def _manifest(tmp_path, **overrides):
    base = dict(params=_tiny_params(), schemes=(harness.SCHEME_STAR_PROPOSED,),
                seeds=(0,), episodes=2, beamform_every=0,
                output_dir=str(tmp_path))
    base.update(overrides)
    return ExperimentManifest(**base)


class TestManifest:
    def test_rejects_unknown_scheme(self, tmp_path):
        with pytest.raises(ValueError):
            _manifest(tmp_path, schemes=("NOPE",))

    def test_episode_default_from_params(self, tmp_path):
        m = _manifest(tmp_path, episodes=None)
        assert m.n_episodes == m.params.episodes

    def test_fingerprint_tracks_params(self, tmp_path):
        a = _manifest(tmp_path)
        b = _manifest(tmp_path, params=_tiny_params(n_elements=8))
        assert a.fingerprint() != b.fingerprint()
        assert a.fingerprint() == _manifest(tmp_path).fingerprint()


class TestRunScheme:
    def test_zero_episodes_empty(self, tmp_path):
        result = run_scheme(_manifest(tmp_path, episodes=0),
                            harness.SCHEME_MAB, seed=0)
        assert result.episodes == [] and result.beamform_calls == 0

    def test_deterministic_repeat(self, tmp_path):
        m = _manifest(tmp_path, episodes=3)
        a = run_scheme(m, harness.SCHEME_STAR_PROPOSED, seed=1)
        b = run_scheme(m, harness.SCHEME_STAR_PROPOSED, seed=1)
        for ra, rb in zip(a.episodes, b.episodes):
            assert (ra.sum_rate, ra.p_latency, ra.reward) == \
                   (rb.sum_rate, rb.p_latency, rb.reward)

    def test_per_step_beamform_cadence(self, tmp_path):
        m = _manifest(tmp_path, episodes=2, beamform_every=1)
        result = run_scheme(m, harness.SCHEME_MAB, seed=0)
        total_steps = 2 * m.params.steps_per_episode
        assert result.beamform_calls == total_steps

    def test_per_episode_beamform_cadence(self, tmp_path):
        m = _manifest(tmp_path, episodes=3, beamform_every=0)
        result = run_scheme(m, harness.SCHEME_MAB, seed=0)
        assert result.beamform_calls == 3

    def test_random_scheme_surface_uniform(self, tmp_path):
        m = _manifest(tmp_path, episodes=40,
                      params=_tiny_params(steps_per_episode=5))
        counts = np.zeros(3)
        orig_step = V2XEnv.step

        def spy(self, action, redraw_fading=True):
            counts[action.amp_choice[0]] += 1
            return orig_step(self, action, redraw_fading)

        V2XEnv.step = spy
        try:
            run_scheme(m, harness.SCHEME_STAR_RANDOM, seed=3)
        finally:
            V2XEnv.step = orig_step
        n = counts.sum()
        chi2 = ((counts - n / 3) ** 2 / (n / 3)).sum()
        assert chi2 < stats.chi2.ppf(0.999, df=2)

    def test_ris_scheme_kills_transmission_side(self, tmp_path):
        m = _manifest(tmp_path, episodes=1)
        orig_step = V2XEnv.step
        seen = []

        def spy(self, action, redraw_fading=True):
            t = orig_step(self, action, redraw_fading)
            seen.append(t.next_state.ris.beta_t.copy())
            return t

        V2XEnv.step = spy
        try:
            run_scheme(m, harness.SCHEME_RIS_PROPOSED, seed=0)
        finally:
            V2XEnv.step = orig_step
        assert seen and all(np.all(b == 0.0) for b in seen)

    def test_all_schemes_run(self, tmp_path):
        m = _manifest(tmp_path, schemes=ALL_SCHEMES, episodes=1)
        results = run_algorithm1(m)
        assert {r.scheme for r in results} == set(ALL_SCHEMES)
        assert all(len(r.episodes) == 1 for r in results)


class TestConvergence:
    def test_flat_series_converges_at_window_edge(self):
        assert convergence_episode([5.0] * 120, window=50) == 99

    def test_growing_series_never_converges(self):
        r = [float(2 ** k) for k in range(120)]
        assert convergence_episode(r, window=50) is None

    def test_short_series(self):
        assert convergence_episode([1.0] * 30, window=50) is None


class TestBruteForce:
    def test_unflatten_round_trip(self):
        sizes = (3, 4, 2)
        seen = set()
        for flat in range(24):
            idx = _unflatten(flat, sizes)
            assert all(0 <= v < s for v, s in zip(idx, sizes))
            seen.add(tuple(idx))
        assert len(seen) == 24
        assert _unflatten(0, sizes) == [0, 0, 0]
        assert _unflatten(23, sizes) == [2, 3, 1]

    def test_cap_enforced(self):
        params = _tiny_params(n_vues_i=20, n_v2v_pairs_v=6, element_groups=4,
                              power_levels_lp=4)
        env = V2XEnv(drop_scenario(params, 0), params)
        env.reset(0)
        with pytest.raises(SpaceTooLarge):
            brute_force_oracle(env)

    def test_oracle_dominates_sampled_actions(self):
        params = _tiny_params()
        env = V2XEnv(drop_scenario(params, 0), params)
        env.reset(0)
        best_action, best_reward = brute_force_oracle(env)
        snap = env.snapshot()
        rng = np.random.default_rng(0)
        cat = env.catalog
        for _ in range(50):
            idx = [int(rng.integers(s)) for s in cat.branch_sizes]
            env.restore(snap)
            t = env.step(ActionTuple.from_indices(idx, cat), redraw_fading=False)
            assert t.reward <= best_reward + 1e-12
        env.restore(snap)
        t = env.step(best_action, redraw_fading=False)
        assert t.reward == pytest.approx(best_reward, rel=1e-12)

    def test_oracle_restores_state(self):
        params = _tiny_params()
        env = V2XEnv(drop_scenario(params, 0), params)
        state = env.reset(0)
        brute_force_oracle(env)
        np.testing.assert_array_equal(env.state.tokens, state.tokens)


class TestExports:
    def _records(self):
        return [EpisodeRecord(e, "MAB", 0, 1e8 + e, e % 2, -5.0 + e)
                for e in range(4)]

    def test_csv_header_and_determinism(self, tmp_path):
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        export_csv(self._records(), str(p1))
        export_csv(self._records(), str(p2))
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines) == 5

    def test_single_sample_ci_zero(self):
        mean, half = _mean_ci95(np.array([3.5]))
        assert (mean, half) == (3.5, 0.0)

    def test_known_ci(self):
        vals = np.array([1.0, 2.0, 3.0])
        mean, half = _mean_ci95(vals)
        assert mean == pytest.approx(2.0)
        assert half == pytest.approx(1.96 * 1.0 / np.sqrt(3))

    def test_aggregate_outputs(self, tmp_path):
        m = _manifest(tmp_path, schemes=(harness.SCHEME_MAB,), episodes=5)
        results = [run_scheme(m, harness.SCHEME_MAB, seed=s) for s in (0, 1)]
        summary = aggregate_and_export(results, m)
        assert os.path.exists(tmp_path / "episodes.csv")
        assert os.path.exists(tmp_path / "cdf_mab.csv")
        on_disk = json.loads((tmp_path / "summary.json").read_text())
        assert on_disk["schemes"].keys() == summary["schemes"].keys()
        stats_mab = on_disk["schemes"]["MAB"]
        assert stats_mab["sum_rate_ci95"] >= 0.0
        cdf = (tmp_path / "cdf_mab.csv").read_text().splitlines()
        assert cdf[0] == "sum_rate,cdf"
        last = float(cdf[-1].split(",")[1])
        assert last == pytest.approx(1.0)

    def test_constant_data_cdf_step(self, tmp_path):
        m = _manifest(tmp_path, schemes=(harness.SCHEME_MAB,), episodes=1)
        run = RunResult(scheme="MAB", seed=0,
                        episodes=[EpisodeRecord(0, "MAB", 0, 7.0, 1.0, 2.0)])
        aggregate_and_export([run], m)
        cdf = (tmp_path / "cdf_mab.csv").read_text().splitlines()
        assert cdf[1] == "7,1"

    def test_byte_identical_end_to_end(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            m = _manifest(out, schemes=(harness.SCHEME_MAB,), episodes=3,
                          output_dir=str(out))
            aggregate_and_export([run_scheme(m, harness.SCHEME_MAB, 0)], m)
        assert (out_a / "episodes.csv").read_bytes() == \
               (out_b / "episodes.csv").read_bytes()
        assert (out_a / "summary.json").read_bytes() == \
               (out_b / "summary.json").read_bytes()
