"""Acceptance criteria, one test each.

Every test prints a line ``[PASS|FAIL] AC<n> <title>: <measured> (tolerance ...)``
to the terminal, including under pytest's output capture, then asserts.
Runtime limits are part of each verdict.
"""

import copy
import json
import time

import numpy as np
import pytest
from scipy import stats

from conftest import goy8, scalar_setup
from goyld import cli
from goyld.config import DEFAULT_CONFIG
from goyld.control import OptimizerConfig, RateQuery, minimize_rate, solve_skeleton
from goyld.control_path import ControlPath
from goyld.ldp_verify import (
    EventSpec,
    check_energy_bounds,
    check_monotonicity,
    check_weak_convergence,
    estimate_rare_event,
    gaussian_rate_oracle,
    gaussian_tail_oracle,
    grid_search_gaussian_rate,
    ldp_decay_check,
    poisson_cramer_rate,
    poisson_tail_oracle,
    scalar_scheme_moments,
)
from goyld.noise import CoefficientFamily, CovarianceQ, MarkSpace
from goyld.sde import IntegratorConfig, simulate
from goyld.shell_core import ModelParams, ShellGrid
from goyld.suites import operator_checks

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def emit(n, title, ok, measured, tolerance, seconds, limit):
        ok = bool(ok) and seconds < limit
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] AC{n} {title}: {measured} "
                  f"(tolerance {tolerance}; {seconds:.1f}s of {limit:g}s)")
        return ok
    return emit


def test_ac01_operator_algebra(verdict):
    t0 = time.perf_counter()
    reps = {r.check_name: r for r in operator_checks(samples=1000, seed=1, n_algebra=32)}
    dt = time.perf_counter() - t0
    o, d = reps["orthogonality"].metrics, reps["bilinear_decomposition"].metrics
    worst = max(o["max_self"], o["max_cross"], d["max_relative_error"])
    ok = reps["orthogonality"].verdict and reps["bilinear_decomposition"].verdict
    assert verdict(1, "operator algebra N=32, 1000 states", ok,
                   f"max orthogonality/decomposition residual {worst:.2e}", "1e-12", dt, 5)


def test_ac02_operator_bounds(verdict):
    t0 = time.perf_counter()
    reps = {r.check_name: r for r in operator_checks(samples=1000, seed=2, n_algebra=8, n_bounds=16,
                                                      bound_samples=250)}
    dt = time.perf_counter() - t0
    b, l4 = reps["operator_bounds"], reps["l4_interpolation"]
    change = max(b.metrics["relative_change"].values())
    assert verdict(2, "operator bounds N=16, 250 vs 500 samples", b.verdict and l4.verdict,
                   f"max relative change {change:.3f}, l4 ratio*k1^2 {l4.metrics['max_ratio']:.3f}",
                   "change <= 0.10, l4 ratio*k1^2 <= 1", dt, 10)


def test_ac03_monotonicity(verdict):
    grid = ShellGrid(1.0, 16)
    u0 = np.zeros(16, complex)
    params = ModelParams(1.0, grid, u0=u0)
    q = CovarianceQ(np.linspace(1.0, 0.1, 16))
    marks = MarkSpace(["a", "b"], [1.0, 0.5])
    c = np.zeros((2, 16), complex)
    c[0, 0], c[1, 3] = 0.3, 0.2j
    t0 = time.perf_counter()
    results = {}
    for kind in ("additive", "diagonal_multiplicative", "saturated_multiplicative"):
        fam = CoefficientFamily(kind, np.full(16, 0.3), c, q, marks)
        eps = 0.9 * params.nu / (2 * fam.L) if fam.L > 0 else 0.5
        rep = check_monotonicity(params, fam, marks, q, 1.0, eps, samples=1000, seed=3)
        results[kind] = rep.metrics["violations"]
    dt = time.perf_counter() - t0
    assert verdict(3, "local monotonicity, 3 families, r=1", sum(results.values()) == 0,
                   f"violations {results}", "0 at 1e-10*scale", dt, 30)


def test_ac04_energy_balance(verdict):
    grid = ShellGrid(1.0, 16)
    u0 = np.zeros(16, complex)
    u0[:4] = [1.0, 0.5j, -0.3, 0.2 + 0.1j]
    params = ModelParams(1e-2, grid, u0=u0)
    q = CovarianceQ(np.ones(16))
    marks = MarkSpace(["z"], [1.0])
    fam = CoefficientFamily("additive", np.zeros(16), np.zeros((1, 16)), q, marks)
    e0 = float(np.sum(np.abs(u0) ** 2))
    t0 = time.perf_counter()
    res = []
    for dt in (1e-4, 5e-5):
        tr = simulate(params, fam, marks, q, IntegratorConfig(dt, 1.0), 0)
        res.append(abs(tr.energy[-1] + 2 * tr.dissipation_integral[-1] - e0))
    dt = time.perf_counter() - t0
    ratio = res[0] / res[1]
    ok = res[0] <= 1e-2 * e0 and 1.6 <= ratio <= 2.4
    assert verdict(4, "deterministic energy balance N=16", ok,
                   f"residual {res[0]:.2e} at dt=1e-4, {res[1]:.2e} at dt=5e-5 (ratio {ratio:.2f})",
                   "1e-2*|u0|^2, ratio 2 +- 0.4", dt, 10)


def test_ac05_energy_inequality(verdict):
    t0 = time.perf_counter()
    margins = {}
    for kind in ("additive", "saturated_multiplicative"):
        params, fam, marks, q = goy8(kind)
        for eps in (0.1, 0.01):
            rep = check_energy_bounds(params, fam, marks, q, IntegratorConfig(1e-3, 1.0, eps), 1000, 5)
            margins[(kind, eps)] = (rep.verdict, rep.metrics["min_margin"])
    dt = time.perf_counter() - t0
    ok = all(v for v, _ in margins.values())
    worst = min(m for _, m in margins.values())
    assert verdict(5, "energy inequality, 4 cells x 1000 paths", ok,
                   f"smallest margin bound-(estimate-3SE) {worst:.3f}", ">= 0 in every cell", dt, 300)


def test_ac06_scalar_oracles(verdict):
    t0 = time.perf_counter()
    n, reps = 2000, 20
    # pure jumps: u(T) = u0 + eps N - lam T with N ~ Poisson(lam T / eps)
    eps, u0, k = 0.1, 1.5, 16
    pp, fp, mp, qp = scalar_setup(nu=1e-9, u0=u0, jump=1.0, lam=1.0)
    a_p = (u0 + eps * (k - 0.5) - 1.0) ** 2
    p_exact = poisson_tail_oracle(10.0, k)
    # Gaussian: discrete linear scheme, noncentral chi-square tail
    pg, fg, mg, qg = scalar_setup(nu=0.3, u0=0.5, sigma=1.0)
    m, var, _ = scalar_scheme_moments(0.5, 0.3, pg.grid.k[0], 1e-2, 100, 1.0, 1.0, eps)
    # threshold at the 3% upper quantile so the event is rare but observable
    a_g = var * stats.ncx2.isf(0.03, 2, abs(m) ** 2 / var)
    g_exact = gaussian_tail_oracle(m, var, a_g)
    hits_p = hits_g = 0
    cfg = IntegratorConfig(1e-2, 1.0, eps)
    for s in range(reps):
        ep = estimate_rare_event(EventSpec(a_p, 1.0), pp, fp, mp, qp, cfg, n, 1000 + s)
        eg = estimate_rare_event(EventSpec(a_g, 1.0), pg, fg, mg, qg, cfg, n, 2000 + s)
        hits_p += abs(ep.p_hat - p_exact) <= 3 * np.sqrt(p_exact * (1 - p_exact) / n)
        hits_g += abs(eg.p_hat - g_exact) <= 3 * np.sqrt(g_exact * (1 - g_exact) / n)
    dt = time.perf_counter() - t0
    ok = hits_p >= 19 and hits_g >= 19
    assert verdict(6, "scalar tail oracles, 20 seeds", ok,
                   f"within 3 SE: Poisson {hits_p}/20 (p={p_exact:.4f}), Gaussian {hits_g}/20 (p={g_exact:.4f})",
                   ">= 19/20 each", dt, 120)


def test_ac07_weak_convergence(verdict):
    params, fam, marks, q = goy8()
    import dataclasses

    params = dataclasses.replace(params, nonlinear=False)
    psi = np.zeros((2, 8), complex)
    psi[0, :2] = [0.5, 0.2j]
    psi[1, :2] = [-0.3, 0.1]
    ctrl = ControlPath([0.0, 0.5, 1.0], psi, [[2.0, 0.5], [1.0, 1.5]])
    t0 = time.perf_counter()
    rep = check_weak_convergence(params, fam, marks, q, ctrl, [0.1, 0.01, 0.001], 200, 7, 1e-3,
                                 max_ratio=0.5)
    dt = time.perf_counter() - t0
    med = rep.metrics["median"]
    assert verdict(7, "weak convergence, linear additive N=8", rep.verdict,
                   "medians " + ", ".join(f"{x:.2e}" for x in med)
                   + "; ratios " + ", ".join(f"{x:.3f}" for x in rep.metrics["median_ratios"]),
                   "strictly decreasing, ratio <= 0.5", dt, 300)


def _gaussian_scalar():
    params, fam, marks, q = scalar_setup(nu=0.05, u0=0.5, sigma=1.0)
    return params, fam, marks, q


def _jump_scalar():
    return scalar_setup(nu=1e-9, u0=1.0, jump=1.0, lam=1.0)


OPT = OptimizerConfig(n_nodes=2, dt=1e-2, jump_drift_weight="standard")


def test_ac08_rate_oracles(verdict):
    t0 = time.perf_counter()
    params, fam, marks, q = _gaussian_scalar()
    T, dt, a = 1.0, 1e-2, 4.0
    g = minimize_rate(RateQuery("terminal_energy_above", a, T, 1e-4), params, fam, marks, q, OPT)
    r = 1.0 / (1.0 + dt * params.nu * params.grid.k_squared[0])
    K = int(round(T / dt))
    w = dt * r ** (K - np.arange(K))
    oracle_g, _ = grid_search_gaussian_rate(0.5 * r ** K, [w[:K // 2].sum(), w[K // 2:].sum()], 1.0,
                                            np.array([T / 2, T / 2]), a)
    params, fam, marks, q = _jump_scalar()
    j = minimize_rate(RateQuery("terminal_energy_above", 4.02 ** 2, T, 1e-4), params, fam, marks, q, OPT)
    oracle_j = poisson_cramer_rate(1.0, 4.02)
    dt_run = time.perf_counter() - t0
    gap_g = abs(g.best_cost - oracle_g) / oracle_g
    gap_j = abs(j.best_cost - oracle_j) / oracle_j
    assert verdict(8, "rate-function oracles", gap_g <= 0.02 and gap_j <= 0.05,
                   f"Gaussian {g.best_cost:.5f} vs grid {oracle_g:.5f} (gap {gap_g:.2%}); "
                   f"jump {j.best_cost:.5f} vs Cramer {oracle_j:.5f} (gap {gap_j:.2%})",
                   "2% Gaussian, 5% jump", dt_run, 300)


def test_ac09_ldp_decay(verdict):
    t0 = time.perf_counter()
    ladder = [0.1, 0.05, 0.025, 0.0125]
    params, fam, marks, q = _jump_scalar()
    rj = ldp_decay_check(EventSpec(4.02 ** 2, 1.0), params, fam, marks, q, 1e-2, ladder, [4000] * 4, 3,
                         opt=OPT, oracle_rate=poisson_cramer_rate(1.0, 4.02))
    params, fam, marks, q = _gaussian_scalar()
    mean, _, G = scalar_scheme_moments(0.5, params.nu, params.grid.k[0], 1e-2, 100, 1.0, 1.0, 1.0)
    rg = ldp_decay_check(EventSpec(4.0, 1.0), params, fam, marks, q, 1e-2, ladder, [4000] * 4, 3,
                         opt=OPT, oracle_rate=gaussian_rate_oracle(mean, G, 1.0, 1.0, 4.0))
    params, fam, marks, q = goy8()
    null = ControlPath.null(1.0, 1, 8, 2)
    a = 4.0 * solve_skeleton(params, fam, marks, q, null, 1e-3).energy[-1]
    ev = EventSpec(a, 1.0)
    rate = minimize_rate(ev.query(), params, fam, marks, q,
                         OptimizerConfig(n_nodes=2, dt=1e-2, jump_drift_weight="standard"))
    rgoy = ldp_decay_check(ev, params, fam, marks, q, 1e-3, [0.2, 0.1, 0.05], [2000] * 3, 5, rate=rate)
    dt = time.perf_counter() - t0
    ok = rj.verdict and rg.verdict and rgoy.verdict
    assert verdict(9, "LDP decay consistency", ok,
                   f"jump {rj.extrapolated:.4f} vs -{rj.oracle_rate:.4f} (gap {rj.oracle_gap:.2%}); "
                   f"Gaussian {rg.extrapolated:.4f} vs -{rg.oracle_rate:.4f} (gap {rg.oracle_gap:.2%}); "
                   f"GOY N=8 {rgoy.extrapolated:.4f} vs -1.2*{rgoy.rate_bound:.4f}",
                   "10% scalar, >= -1.2*best_cost GOY", dt, 900)


def _hashes(out):
    m = json.loads((out / "manifest.json").read_text())
    return {f["path"]: f["sha256"] for f in m["files"]}


def test_ac10_reproducibility(tmp_path, verdict):
    d = copy.deepcopy(DEFAULT_CONFIG)
    d["integrator"] = {"dt": 1e-2, "T": 1.0}
    d["seed"] = 42
    d["verify"] = {"samples": 200}
    d["rate"] = {"n_nodes": 2, "dt": 5e-2, "restarts": 1, "max_iter": 50}
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(d))
    t0 = time.perf_counter()
    runs = [("simulate",), ("skeleton",), ("verify", "--suite", "noise"),
            ("rate", "--target-energy", "2.0")]
    same = {}
    for argv in runs:
        hs = []
        for rep in range(2):
            out = tmp_path / f"{argv[0]}{rep}"
            cli.main([*argv, "--config", str(cfg), "--out", str(out), "--threads", "2"])
            hs.append(_hashes(out))
        same[argv[0]] = hs[0] == hs[1] and len(hs[0]) > 0
    dt = time.perf_counter() - t0
    assert verdict(10, "bitwise reproducibility", all(same.values()),
                   f"identical hashes {same}", "all identical", dt, 120)
