"""Verification suites run by ``goyld verify --suite NAME``.

Each suite takes a resolved :class:`~goyld.config.RunConfig` and returns a
list of :class:`~goyld.ldp_verify.CheckReport`.
"""

import numpy as np

from . import rng as rngmod
from .control import OptimizerConfig, RateQuery, minimize_rate, solve_skeleton
from .control_path import ControlPath
from .ldp_verify import (
    CheckReport,
    EventSpec,
    check_energy_bounds,
    check_monotonicity,
    check_weak_convergence,
    ldp_decay_check,
    moment_ladder,
)
from .noise import audit_hypotheses, sample_jump_times, sample_wiener_increments
from .shell_core import (
    ShellGrid,
    apply_A,
    apply_B,
    h_norm,
    inner,
    l4_norm,
    measure_operator_bounds,
    random_states,
    v_norm,
)


def operator_checks(k0=1.0, samples=1000, seed=0, n_algebra=32, n_bounds=16, bound_samples=250):
    """Orthogonality, bilinear decomposition, bound stability, l4 interpolation, linearity of A."""
    reports = []
    grid = ShellGrid(k0, n_algebra)
    g = rngmod.stream(seed, 0)
    u = random_states(g, grid, samples)
    v = random_states(g, grid, samples)
    w = u - v

    scale = v_norm(u, grid) * h_norm(u) ** 2
    self_orth = np.abs(inner(apply_B(u, u, grid), u)) / scale
    cross = np.abs(inner(apply_B(u, v, grid), v)) / (v_norm(u, grid) * h_norm(v) ** 2)
    reports.append(CheckReport(
        "orthogonality",
        {"n_shells": n_algebra, "samples": samples, "max_self": float(self_orth.max()),
         "max_cross": float(cross.max()), "tolerance": 1e-12},
        bool(self_orth.max() <= 1e-12 and cross.max() <= 1e-12), seed,
        rows=[[i, float(a), float(b)] for i, (a, b) in enumerate(zip(self_orth, cross))],
        columns=["sample", "self_ratio", "cross_ratio"]))

    lhs = apply_B(u, u, grid) - apply_B(v, v, grid)
    rhs = apply_B(v, w, grid) + apply_B(w, v, grid) + apply_B(w, w, grid)
    size = h_norm(apply_B(u, u, grid)) + h_norm(apply_B(v, v, grid)) + h_norm(rhs)
    rel = h_norm(lhs - rhs) / size
    reports.append(CheckReport(
        "bilinear_decomposition",
        {"n_shells": n_algebra, "samples": samples, "max_relative_error": float(rel.max()),
         "tolerance": 1e-12},
        bool(rel.max() <= 1e-12), seed,
        rows=[[i, float(x)] for i, x in enumerate(rel)], columns=["sample", "relative_error"]))

    bgrid = ShellGrid(k0, n_bounds)
    a = measure_operator_bounds(bgrid, bound_samples, seed)
    b = measure_operator_bounds(bgrid, 2 * bound_samples, seed)
    names = ("c1", "c2", "c3", "c4")
    change = {n: abs(getattr(b, n) - getattr(a, n)) / getattr(a, n) for n in names}
    finite = all(np.isfinite(getattr(b, n)) for n in names)
    reports.append(CheckReport(
        "operator_bounds",
        {"n_shells": n_bounds, "samples": [bound_samples, 2 * bound_samples],
         **{n: [getattr(a, n), getattr(b, n)] for n in names},
         "relative_change": change, "tolerance": 0.10},
        bool(finite and max(change.values()) <= 0.10), seed,
        rows=[[n, getattr(a, n), getattr(b, n), change[n]] for n in names],
        columns=["constant", "samples_n", "samples_2n", "relative_change"]))

    k1 = grid.k[0]
    ratio = l4_norm(u) ** 4 * k1 ** 2 / (h_norm(u) ** 2 * v_norm(u, grid) ** 2)
    reports.append(CheckReport(
        "l4_interpolation", {"max_ratio": float(ratio.max()), "bound": 1.0},
        bool(ratio.max() <= 1.0), seed,
        rows=[[i, float(x)] for i, x in enumerate(ratio)], columns=["sample", "ratio"]))

    al, be = 0.7 - 0.2j, -1.3 + 0.5j
    lin = np.max(np.abs(apply_A(al * u + be * v, grid) - (al * apply_A(u, grid) + be * apply_A(v, grid)))
                 / np.abs(apply_A(np.abs(al * u) + np.abs(be * v), grid)))
    reports.append(CheckReport("A_linearity", {"max_relative_error": float(lin)}, bool(lin <= 1e-15), seed))
    return reports


def noise_checks(cfg, samples, seed):
    q, marks, fam = cfg.noise()
    audit = audit_hypotheses(fam, marks, samples, seed)
    reports = [CheckReport("hypothesis_audit", dict(audit.__dict__), audit.passed, seed)]

    n = 100 * samples
    dt = 0.01
    dW = sample_wiener_increments(dt, q, n, rngmod.stream(seed, 0, rngmod.WIENER))
    m2 = np.abs(dW) ** 2 / dt
    mean, se = m2.mean(axis=0), m2.std(axis=0, ddof=1) / np.sqrt(n)
    target = 2.0 * q.q
    z = np.abs(mean - target) / np.where(se > 0, se, 1.0)
    reports.append(CheckReport(
        "wiener_second_moment",
        {"draws": n, "mean": mean, "target": target, "max_z": float(z.max())},
        bool(z.max() <= 4.0), seed,
        rows=[[i + 1, float(a), float(b), float(c)] for i, (a, b, c) in enumerate(zip(mean, se, target))],
        columns=["shell", "mean_abs_sq_over_dt", "se", "target"]))

    runs = 10 * samples
    counts = np.array([len(sample_jump_times(1.0, marks, 1.0, rng=rngmod.stream(seed, i, rngmod.JUMPS)))
                       for i in range(runs)])
    lam = marks.total_mass
    zc = abs(counts.mean() - lam) / np.sqrt(lam / runs)
    # var of the sample variance of Poisson(lam) ~ (lam + 2 lam^2) / runs
    zv = abs(counts.var(ddof=1) - lam) / np.sqrt((lam + 2 * lam ** 2) / runs)
    reports.append(CheckReport(
        "poisson_counts", {"runs": runs, "mean": float(counts.mean()), "var": float(counts.var(ddof=1)),
                           "target": lam, "z_mean": float(zc), "z_var": float(zv)},
        bool(zc <= 4 and zv <= 4), seed))
    return reports


def energy_checks(cfg, n_paths, seed, p_list, workers=1):
    params = cfg.params()
    q, marks, fam = cfg.noise()
    icfg = cfg.integrator()
    rep = check_energy_bounds(params, fam, marks, q, icfg, n_paths, seed, tuple(p_list), workers)
    higher = [p for p in p_list if p > 2]
    if higher:
        return [rep] + energy_moment_checks(cfg, n_paths, seed, max(higher))
    return [rep]


def monotonicity_checks(cfg, samples, seed):
    params = cfg.params()
    q, marks, fam = cfg.noise()
    r = cfg["verify"]["r"]
    return [check_monotonicity(params, fam, marks, q, r, cfg["noise"]["epsilon"], samples, seed)]


def _control_or_null(cfg):
    c = cfg.control()
    if c is not None:
        return c
    grid = cfg.grid()
    _, marks, _ = cfg.noise()
    return ControlPath.null(cfg["integrator"]["T"], 1, grid.n_shells, marks.size)


def weak_convergence_checks(cfg, n_paths, seed, workers=1):
    params = cfg.params()
    q, marks, fam = cfg.noise()
    ctrl = _control_or_null(cfg)
    return [check_weak_convergence(params, fam, marks, q, ctrl, cfg["verify"]["epsilons"], n_paths,
                                   seed, cfg["integrator"]["dt"], cfg["jump_drift_weight"],
                                   workers=workers)]


def optimizer_config(cfg):
    r = cfg["rate"]
    return OptimizerConfig(n_nodes=int(r["n_nodes"]), dt=float(r["dt"]), max_iter=int(r["max_iter"]),
                           restarts=int(r["restarts"]), phi_min=float(r["phi_min"]),
                           phi_max=float(r["phi_max"]), jump_drift_weight=cfg["jump_drift_weight"],
                           marks_off=tuple(r["marks_off"]), seed=int(cfg["seed"]))


def default_threshold(cfg):
    """Four times the null-control terminal energy."""
    params = cfg.params()
    q, marks, fam = cfg.noise()
    null = ControlPath.null(cfg["integrator"]["T"], 1, params.grid.n_shells, marks.size)
    sk = solve_skeleton(params, fam, marks, q, null, cfg["rate"]["dt"], cfg["jump_drift_weight"])
    return 4.0 * float(sk.energy[-1])


def ldp_checks(cfg, n_paths, seed, workers=1):
    params = cfg.params()
    q, marks, fam = cfg.noise()
    v = cfg["verify"]
    a = v["threshold"] if v["threshold"] is not None else default_threshold(cfg)
    T = cfg["integrator"]["T"]
    event = EventSpec(a, T)
    r = cfg["rate"]
    query = RateQuery("terminal_energy_above", a, T, r["match_tolerance"], r["budget"])
    rate = minimize_rate(query, params, fam, marks, q, optimizer_config(cfg))
    eps = v["epsilons"]
    rep = ldp_decay_check(event, params, fam, marks, q, cfg["integrator"]["dt"], eps,
                          [n_paths] * len(eps), seed, rate=rate, workers=workers)
    d = rep.to_dict()
    d["threshold"] = a
    d["jump_drift_weight"] = cfg["jump_drift_weight"]
    rows = [[e, p, lo, hi, m, y] for e, p, (lo, hi), m, y in
            zip(rep.epsilons, rep.probabilities, rep.cis, rep.methods, rep.eps_log_p)]
    return [CheckReport("ldp_decay", d, rep.verdict, seed, rows=rows,
                        columns=["epsilon", "p_hat", "ci_low", "ci_high", "method", "eps_log_p"])]


def energy_moment_checks(cfg, n_paths, seed, p=4):
    """``E sup|u|^p`` along ``verify.epsilons``: finite and nonincreasing as eps decreases."""
    params = cfg.params()
    q, marks, fam = cfg.noise()
    i = cfg["integrator"]
    vals = moment_ladder(params, fam, marks, q, i["dt"], i["T"], cfg["verify"]["epsilons"], n_paths, seed, p)
    means = np.array([m for m, _ in vals])
    ses = np.array([s for _, s in vals])
    ok = bool(np.all(np.isfinite(means)) and np.all(np.diff(means) <= 3 * (ses[1:] + ses[:-1])))
    return [CheckReport("moment_ladder", {"p": p, "epsilons": cfg["verify"]["epsilons"],
                                          "mean": means, "se": ses}, ok, seed)]


def run_suite(name, cfg, workers=1):
    v = cfg["verify"]
    seed = int(cfg["seed"])
    if name == "operators":
        return operator_checks(cfg["model"]["k0"], v["samples"], seed)
    if name == "noise":
        return noise_checks(cfg, v["samples"], seed)
    if name == "energy":
        return energy_checks(cfg, v["n_paths"], seed, v["p_list"], workers)
    if name == "monotonicity":
        return monotonicity_checks(cfg, v["samples"], seed)
    if name == "weak-convergence":
        return weak_convergence_checks(cfg, v["n_paths"], seed, workers)
    if name == "ldp":
        return ldp_checks(cfg, v["n_paths"], seed, workers)
    raise ValueError(name)
