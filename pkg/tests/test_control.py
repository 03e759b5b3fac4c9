import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import goy8, scalar_setup
from goyld.control import (
    OptimizerConfig,
    RateQuery,
    minimize_rate,
    rate_upper_bound,
    solve_skeleton,
)
from goyld.control_path import ControlPath, cost, drift_weight, ell
from goyld.errors import ConfigurationError, DomainError
from goyld.ldp_verify import grid_search_gaussian_rate, poisson_cramer_rate
from goyld.noise import CovarianceQ, MarkSpace
from goyld.sde import IntegratorConfig, simulate


class TestEll:
    def test_examples(self):
        assert ell(1.0) == 0.0
        assert ell(0.0) == 1.0
        assert ell(np.e) == pytest.approx(1.0, abs=1e-15)
        assert ell(2.0) == pytest.approx(2 * np.log(2) - 1)

    def test_domain(self):
        with pytest.raises(DomainError):
            ell(-0.1)

    def test_strict_convexity(self, rng):
        r1, r2 = rng.uniform(0, 10, (2, 1000))
        keep = r1 != r2
        mid = ell((r1 + r2) / 2)
        assert np.all(mid[keep] < (0.5 * (ell(r1) + ell(r2)))[keep])

    @given(st.floats(0, 1e6))
    def test_nonnegative(self, r):
        assert ell(r) >= 0

    def test_weights(self):
        assert drift_weight("standard")(np.array([1.0]))[0] == 0
        assert drift_weight("paper_literal")(np.array([1.0]))[0] == 0
        with pytest.raises(ConfigurationError):
            drift_weight("other")


def _marks1():
    return MarkSpace(["z"], [1.0])


class TestCost:
    def test_null(self):
        c = cost(ControlPath.null(1.0, 4, 3, 1), _marks1(), CovarianceQ([1.0, 1, 1]))
        assert c.total == 0

    def test_jump_example(self):
        ctrl = ControlPath([0.0, 1.0], np.zeros((1, 3)), [[2.0]])
        assert cost(ctrl, _marks1(), CovarianceQ([1.0, 1, 1])).jump_cost == pytest.approx(0.386294, abs=1e-6)

    def test_gaussian_example(self):
        c = 1.7
        ctrl = ControlPath([0.0, 1.0], [[c, 0, 0]], [[1.0]])
        assert cost(ctrl, _marks1(), CovarianceQ([1.0, 0.5, 0.5])).gaussian_cost == pytest.approx(c ** 2 / 2)

    def test_psi_outside_cm_space(self):
        ctrl = ControlPath([0.0, 1.0], [[0, 1.0, 0]], [[1.0]])
        assert cost(ctrl, _marks1(), CovarianceQ([1.0, 0, 0])).gaussian_cost == np.inf

    def test_additive_over_windows(self, rng):
        edges = np.array([0.0, 0.3, 0.5, 1.2, 2.0])
        psi = rng.normal(size=(4, 3)) + 1j * rng.normal(size=(4, 3))
        phi = rng.uniform(0, 3, (4, 1))
        q = CovarianceQ([1.0, 0.4, 0.2])
        whole = cost(ControlPath(edges, psi, phi), _marks1(), q)
        a = cost(ControlPath(edges[:3], psi[:2], phi[:2]), _marks1(), q)
        b = cost(ControlPath(edges[2:] - edges[2], psi[2:], phi[2:]), _marks1(), q)
        assert whole.total == pytest.approx(a.total + b.total, rel=1e-14)

    @given(st.floats(1e-3, 1e3))
    def test_q_scaling_invariance(self, s):
        psi = np.array([[0.5 + 1j, -0.2, 0.3j]])
        q = np.array([1.0, 0.4, 0.2])
        a = cost(ControlPath([0.0, 1.0], psi, [[1.0]]), _marks1(), CovarianceQ(q)).gaussian_cost
        b = cost(ControlPath([0.0, 1.0], psi * np.sqrt(s), [[1.0]]), _marks1(), CovarianceQ(q * s)).gaussian_cost
        assert b == pytest.approx(a, rel=1e-12)

    def test_phi_off(self):
        ctrl = ControlPath([0.0, 1.0], np.zeros((1, 3)), [[5.0]], phi_off=[True])
        assert cost(ctrl, _marks1(), CovarianceQ([1.0, 1, 1])).jump_cost == 1.0

    def test_json_round_trip(self, tmp_path, rng):
        ctrl = ControlPath([0.0, 0.5, 1.0], rng.normal(size=(2, 3)) + 1j, rng.uniform(0, 2, (2, 1)))
        ctrl.to_json(tmp_path / "c.json")
        back = ControlPath.from_json(tmp_path / "c.json")
        assert np.array_equal(back.psi, ctrl.psi) and np.array_equal(back.phi, ctrl.phi)

    def test_json_negative_phi(self):
        with pytest.raises(DomainError):
            ControlPath.from_dict({"time_grid": [0, 1], "psi": [[[0, 0]]], "phi": [[-1.0]]})


class TestSkeleton:
    def test_null_is_deterministic_flow(self):
        params, fam, marks, q = goy8()
        sk = solve_skeleton(params, fam, marks, q, ControlPath.null(1.0, 3, 8, 2), 0.01)
        tr = simulate(params, fam, marks, q, IntegratorConfig(0.01, 1.0), 0)
        assert np.array_equal(sk.states, tr.states)

    def test_scalar_linear_closed_form(self):
        nu, s, c, T = 0.3, 0.8, 1.5, 1.0
        params, fam, marks, q = scalar_setup(nu=nu, u0=0.2, sigma=s)
        a = nu * params.grid.k_squared[0]
        ctrl = ControlPath([0.0, T], [[c, 0, 0]], [[1.0]])
        exact = 0.2 * np.exp(-a * T) + s * c * (1 - np.exp(-a * T)) / a
        errs = []
        for dt in (1e-3, 5e-4):
            errs.append(abs(solve_skeleton(params, fam, marks, q, ctrl, dt).terminal[0] - exact))
        assert errs[0] < 1e-3 and errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)

    def test_self_convergence(self):
        params, fam, marks, q = goy8("saturated_multiplicative")
        ctrl = ControlPath([0.0, 0.5, 1.0], [[0.5, 0.2j] + [0] * 6, [-0.3, 0.1] + [0] * 6],
                           [[2.0, 0.5], [1.0, 1.5]])
        dts = [2.0 ** -j for j in range(6, 11)]
        ends = [solve_skeleton(params, fam, marks, q, ctrl, dt, "standard").terminal for dt in dts]
        ref = solve_skeleton(params, fam, marks, q, ctrl, 2.0 ** -14, "standard").terminal
        errs = [np.linalg.norm(e - ref) for e in ends]
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert abs(slope - 1.0) <= 0.2

    def test_weight_switch_matters(self):
        params, fam, marks, q = goy8()
        ctrl = ControlPath([0.0, 1.0], np.zeros((1, 8)), [[3.0, 1.0]])
        a = solve_skeleton(params, fam, marks, q, ctrl, 0.01, "paper_literal").terminal
        b = solve_skeleton(params, fam, marks, q, ctrl, 0.01, "standard").terminal
        assert not np.allclose(a, b)
        assert solve_skeleton(params, fam, marks, q, ctrl, 0.01, "standard").jump_drift_weight == "standard"


class TestRateUpperBound:
    def test_null_endpoint_zero(self):
        params, fam, marks, q = goy8()
        null = ControlPath.null(1.0, 2, 8, 2)
        end = solve_skeleton(params, fam, marks, q, null, 1e-3).terminal
        assert rate_upper_bound(RateQuery("terminal_state", end, 1.0), null, params, fam, marks, q) == 0.0

    def test_zero_budget_infeasible(self):
        params, fam, marks, q = goy8()
        query = RateQuery("terminal_energy_above", 100.0, 1.0, budget=0.0)
        ctrl = ControlPath([0.0, 1.0], [[1.0] + [0] * 7], [[1.0, 1.0]])
        assert rate_upper_bound(query, ctrl, params, fam, marks, q) == np.inf

    def test_never_below_cost(self, rng):
        params, fam, marks, q = goy8()
        query = RateQuery("terminal_energy_above", 0.5, 1.0)
        for _ in range(10):
            psi = np.zeros((2, 8), complex)
            psi[:, :2] = rng.normal(size=(2, 2))
            ctrl = ControlPath([0.0, 0.5, 1.0], psi, rng.uniform(0.1, 3, (2, 2)))
            b = rate_upper_bound(query, ctrl, params, fam, marks, q, dt=1e-2)
            assert b == np.inf or b >= cost(ctrl, marks, q).total


class TestQuery:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            RateQuery("bogus", 1.0, 1.0)
        with pytest.raises(ConfigurationError):
            RateQuery("terminal_energy_above", 1.0, 1.0, match_tolerance=0.0)
        with pytest.raises(ConfigurationError):
            RateQuery("terminal_energy_above", 1.0, 1.0, budget=np.inf)

    def test_violation(self):
        q = RateQuery("terminal_energy_above", 4.0, 1.0)
        assert q.violation(np.array([1.0, 1.0])) == 2.0
        assert q.violation(np.array([3.0, 0.0])) == 0.0
        assert q.violation(np.array([np.nan, 0.0])) == np.inf


class TestMinimize:
    def test_null_matched(self):
        params, fam, marks, q = goy8()
        query = RateQuery("terminal_energy_above", 0.01, 1.0)
        res = minimize_rate(query, params, fam, marks, q, OptimizerConfig(n_nodes=2, dt=1e-2, restarts=1))
        assert res.feasible and res.best_cost <= 1e-8
        assert np.allclose(res.best_control.phi, 1.0, atol=1e-4)
        assert np.allclose(res.best_control.psi, 0.0, atol=1e-4)

    def test_gaussian_scalar_against_grid(self):
        nu, u0, s, a, T, dt = 0.05, 0.5, 1.0, 4.0, 1.0, 1e-2
        params, fam, marks, q = scalar_setup(nu=nu, u0=u0, sigma=s)
        fam.jump_amplitudes[:] = 0
        query = RateQuery("terminal_energy_above", a, T, match_tolerance=1e-4)
        res = minimize_rate(query, params, fam, marks, q,
                            OptimizerConfig(n_nodes=2, dt=dt, jump_drift_weight="standard"))
        r = 1.0 / (1.0 + dt * nu * params.grid.k_squared[0])
        K = int(round(T / dt))
        weights = dt * s * r ** (K - np.arange(K))
        cols = np.array([weights[: K // 2].sum(), weights[K // 2:].sum()])
        oracle, _ = grid_search_gaussian_rate(u0 * r ** K, cols, 1.0, np.array([T / 2, T / 2]), a)
        assert res.best_cost == pytest.approx(oracle, rel=0.02)

    def test_jump_scalar_against_cramer(self):
        lev = 4.02
        params, fam, marks, q = scalar_setup(nu=1e-9, u0=1.0, jump=1.0, lam=1.0)
        fam.sigma_scale[:] = 0
        query = RateQuery("terminal_energy_above", lev ** 2, 1.0, match_tolerance=1e-4)
        res = minimize_rate(query, params, fam, marks, q,
                            OptimizerConfig(n_nodes=2, dt=1e-2, jump_drift_weight="standard"))
        # u(T) = u0 + eps N - lambda T, so the level for eps N is lev - u0 + lambda T = lev
        oracle = poisson_cramer_rate(1.0, lev)
        assert oracle == pytest.approx(ell(lev), rel=1e-8)
        assert res.best_cost == pytest.approx(oracle, rel=0.05)
        assert np.allclose(res.best_control.phi, res.best_control.phi[0], rtol=1e-2)

    def test_trace_monotone_within_stage(self):
        params, fam, marks, q = goy8()
        query = RateQuery("terminal_energy_above", 2.0, 1.0)
        res = minimize_rate(query, params, fam, marks, q, OptimizerConfig(n_nodes=2, dt=2e-2, restarts=1))
        trace = np.array(res.trace)
        for s in np.unique(trace[:, 0]):
            f = trace[trace[:, 0] == s, 2]
            assert np.all(np.diff(f) <= 1e-12 * np.abs(f[:-1]).max())

    def test_infeasible_reports_inf(self):
        params, fam, marks, q = goy8()
        query = RateQuery("terminal_energy_above", 50.0, 1.0, budget=0.01)
        res = minimize_rate(query, params, fam, marks, q,
                            OptimizerConfig(n_nodes=1, dt=5e-2, restarts=1, max_stages=3, max_iter=20))
        assert res.best_cost == np.inf and not res.feasible
        assert "closest_violation" in res.diagnostics

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            OptimizerConfig(phi_min=0.0)
        with pytest.raises(ConfigurationError):
            OptimizerConfig(jump_drift_weight="nope")
