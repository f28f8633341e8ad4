import dataclasses

import numpy as np
import pytest

from starv2x.beamformer import (STATUS_OPTIMAL, BeamformingProblem,
                                BeamformingSolution, feasibility_restore,
                                grid_oracle, mu_floor, relax_power_constraint,
                                solve_for_allocation, sum_rate_from_mu,
                                taylor_sqrt_lower_bound)
from starv2x.errors import DegenerateExpansionPoint, Infeasible
from starv2x.params import SimParams, default_params


def _params(**overrides):
    base = dict(n_vues_i=1, n_antennas_b=1, n_vue_pairs_v=1, outage_sense="paper_upper")
    base.update(overrides)
    known = {f.name for f in dataclasses.fields(SimParams)}
    base = {k: v for k, v in base.items() if k in known}
    return dataclasses.replace(default_params(), **base)


def _problem(h, params, g_v=None, v2v_signal=None, a=None):
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    i_count = h.shape[0]
    if g_v is None:
        g_v = np.zeros(i_count)
    if a is None:
        a = np.zeros((i_count, 1), dtype=int)
    if v2v_signal is None:
        v2v_signal = np.full(a.shape[1], 1e-9)
    return BeamformingProblem(h=h, g_v_const=np.asarray(g_v, dtype=float),
                              a=a, v2v_signal=np.asarray(v2v_signal, float),
                              params=params)


class TestPowerBall:
    def test_interior_point_unchanged(self):
        ball = relax_power_constraint(4.0)
        p = np.array([0.5 + 0.5j, -0.2j])
        np.testing.assert_array_equal(ball.project(p), p)

    def test_double_radius_halved(self):
        ball = relax_power_constraint(1.0)
        p = np.array([2.0 + 0.0j])
        np.testing.assert_allclose(ball.project(p), [1.0 + 0.0j], atol=1e-15)

    def test_boundary(self):
        ball = relax_power_constraint(1.0)
        p = np.array([1.0 + 0.0j])
        np.testing.assert_allclose(ball.project(p), p, atol=1e-15)
        assert ball.contains(p)

    def test_invalid_budget(self):
        with pytest.raises(ValueError):
            relax_power_constraint(0.0)


class TestTaylorBound:
    def test_equality_at_expansion_point(self):
        for xi, mu in [(1.0, 1.0), (2.5, 0.3), (1e-6, 7.0)]:
            assert taylor_sqrt_lower_bound(xi, mu, xi, mu) == pytest.approx(
                np.sqrt(xi * mu), rel=1e-14)

    def test_unit_expansion_value(self):
        # around (1, 1): 1 + (mu-1)/2 + (xi-1)/2; at (3, 3) that is 3.
        assert taylor_sqrt_lower_bound(1.0, 1.0, 3.0, 3.0) == pytest.approx(3.0)

    def test_majorizes_sqrt(self):
        rng = np.random.default_rng(0)
        for _ in range(10000):
            xi0, mu0, xi, mu = rng.uniform(1e-3, 10.0, size=4)
            bound = taylor_sqrt_lower_bound(xi0, mu0, xi, mu)
            assert bound >= np.sqrt(xi * mu) - 1e-12

    def test_degenerate_expansion(self):
        with pytest.raises(DegenerateExpansionPoint):
            taylor_sqrt_lower_bound(0.0, 1.0, 1.0, 1.0)
        with pytest.raises(DegenerateExpansionPoint):
            taylor_sqrt_lower_bound(1.0, -1.0, 1.0, 1.0)

    def test_quadratic_surrogate_inequality(self):
        # |x|^2 >= 2 Re(conj(c) x) - |c|^2 with equality at x = c.
        rng = np.random.default_rng(1)
        for _ in range(1000):
            c = complex(*rng.standard_normal(2))
            x = complex(*rng.standard_normal(2))
            lhs = abs(x) ** 2
            rhs = 2 * (np.conj(c) * x).real - abs(c) ** 2
            assert lhs >= rhs - 1e-12
        assert abs(abs(c) ** 2 - (2 * (np.conj(c) * c).real - abs(c) ** 2)) < 1e-12


class TestMuFloor:
    def test_bandwidth_exponent(self):
        params = _params(r_min_bps=5e6)
        assert mu_floor(params) == pytest.approx(2 ** 0.5 - 1, rel=1e-12)

    def test_zero_rate_floor(self):
        assert mu_floor(_params(r_min_bps=0.0)) == 0.0


class TestClosedForm:
    def test_single_antenna_matches_closed_form(self):
        params = _params(r_min_bps=0.0)
        h = np.array([[1e-5 * np.exp(0.7j)]])
        sol = solve_for_allocation(h, [0.0], np.zeros((1, 1), int), [1e-9], params)
        p_max = params.p_i_max_w
        sigma2 = params.noise_power_sigma2_w
        expect = params.bandwidth_w0_hz * np.log2(1 + p_max * abs(h[0, 0]) ** 2 / sigma2)
        assert sol.status == STATUS_OPTIMAL
        assert sol.objective == pytest.approx(expect, rel=1e-6)
        assert np.linalg.norm(sol.p) == pytest.approx(np.sqrt(p_max), rel=1e-4)

    def test_two_antennas_matched_filter(self):
        params = _params(n_antennas_b=2, r_min_bps=0.0)
        h = np.array([[2e-5 + 1e-5j, -1e-5 + 3e-5j]])
        sol = solve_for_allocation(h, [0.0], np.zeros((1, 1), int), [1e-9], params)
        gain = params.p_i_max_w * np.linalg.norm(h) ** 2
        expect = params.bandwidth_w0_hz * np.log2(
            1 + gain / params.noise_power_sigma2_w)
        assert sol.objective == pytest.approx(expect, rel=1e-5)

    def test_interference_shrinks_rate(self):
        params = _params(r_min_bps=0.0)
        h = np.array([[1e-5]])
        clean = solve_for_allocation(h, [0.0], np.zeros((1, 1), int), [1e-9], params)
        noisy = solve_for_allocation(h, [5e-13], np.ones((1, 1), int), [1e-9], params)
        assert noisy.objective < clean.objective


class TestGridOracle:
    def test_solver_within_half_percent(self):
        rng = np.random.default_rng(2)
        params = _params(r_min_bps=0.0)
        for _ in range(5):
            h = np.array([[1e-5 * complex(*rng.standard_normal(2))]])
            prob = _problem(h, params)
            sol = solve_for_allocation(h, [0.0], np.zeros((1, 1), int),
                                       [1e-9], params)
            _, oracle_rate = grid_oracle(prob)
            assert sol.objective >= oracle_rate * (1 - 0.005)

    def test_rejects_large_instances(self):
        params = _params(n_vues_i=2)
        prob = _problem(np.ones((2, 1)) * 1e-5, params,
                        g_v=np.zeros(2), a=np.zeros((2, 1), int))
        with pytest.raises(ValueError):
            grid_oracle(prob)


class TestSCAProperties:
    def _random_problem(self, rng, i_count=3, b=2, params=None):
        params = params or _params(n_vues_i=i_count, n_antennas_b=b, r_min_bps=0.0)
        h = 1e-5 * (rng.standard_normal((i_count, b))
                    + 1j * rng.standard_normal((i_count, b)))
        g_v = rng.uniform(0, 2e-13, size=i_count)
        return _problem(h, params, g_v=g_v, a=np.zeros((i_count, 1), int))

    def test_trace_non_decreasing(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            prob = self._random_problem(rng)
            sol = solve_for_allocation(prob.h, prob.g_v_const, prob.a,
                                       prob.v2v_signal, prob.params)
            trace = np.array(sol.iterate_trace)
            assert len(trace) >= 1
            if len(trace) > 1:
                assert np.all(np.diff(trace) >= -1e-6 * np.abs(trace[:-1]))

    def test_solution_feasible(self):
        rng = np.random.default_rng(4)
        prob = self._random_problem(rng)
        sol = solve_for_allocation(prob.h, prob.g_v_const, prob.a,
                                   prob.v2v_signal, prob.params)
        p_max = prob.params.p_i_max_w
        assert np.linalg.norm(sol.p) <= np.sqrt(p_max) + 1e-9
        assert np.all(sol.mu >= mu_floor(prob.params) - 1e-12)
        # the slack never overstates the achievable per-link SINR
        sig = np.abs(np.sum(prob.h * sol.p, axis=1)) ** 2
        assert np.all(sol.mu * sol.xi <= sig * (1 + 1e-6) + 1e-18)

    def test_objective_equals_rate_of_mu(self):
        rng = np.random.default_rng(5)
        prob = self._random_problem(rng)
        sol = solve_for_allocation(prob.h, prob.g_v_const, prob.a,
                                   prob.v2v_signal, prob.params)
        assert sol.objective == pytest.approx(
            sum_rate_from_mu(sol.mu, prob.params), rel=1e-12)


class TestInfeasibility:
    def test_unreachable_rate_floor(self):
        params = _params(r_min_bps=1e9)   # demands mu >= 2^100 - 1
        h = np.array([[1e-6]])
        with pytest.raises(Infeasible):
            solve_for_allocation(h, [0.0], np.zeros((1, 1), int), [1e-9], params)

    def test_zero_channel(self):
        params = _params(r_min_bps=0.0)
        with pytest.raises(Infeasible):
            feasibility_restore(_problem(np.zeros((1, 1)), params))

    def test_lower_sense_empty_set_matches_oracle(self):
        # a shared pair whose own signal cannot clear the outage floor even
        # with a silent beam; the solver and the exhaustive oracle must agree.
        params = _params(outage_sense="lower", r_min_bps=0.0)
        h = np.array([[1e-7]])
        a = np.ones((1, 1), dtype=int)
        weak = [1e-15]   # far below gamma_ef * sigma^2
        prob = _problem(h, params, a=a, v2v_signal=weak)
        with pytest.raises(Infeasible):
            solve_for_allocation(h, [0.0], a, weak, params)
        with pytest.raises(Infeasible):
            grid_oracle(prob)


class TestFeasibilityRestore:
    def test_restore_point_in_ball(self):
        rng = np.random.default_rng(6)
        params = _params(n_vues_i=2, n_antennas_b=2, r_min_bps=0.0)
        h = 1e-5 * (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
        sol = feasibility_restore(_problem(h, params, g_v=np.zeros(2),
                                           a=np.zeros((2, 1), int)))
        assert np.linalg.norm(sol.p) <= np.sqrt(params.p_i_max_w) + 1e-9
        assert np.all(sol.mu > 0)
        assert np.all(sol.xi == params.noise_power_sigma2_w)

    def test_solution_objective_nan_without_trace(self):
        sol = BeamformingSolution(p=np.zeros((1, 1)), mu=np.zeros(1),
                                  xi=np.ones(1))
        assert np.isnan(sol.objective)
