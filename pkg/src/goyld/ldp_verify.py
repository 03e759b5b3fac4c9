"""Numerical checks: monotonicity, energy bounds, convergence to the skeleton,
rare-event estimation and the decay-rate comparison.

Every check returns a :class:`CheckReport` that serialises to JSON
``{check_name, config_digest, seed, metrics, verdict}`` plus a CSV of
per-sample values.
"""

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, special, stats

from . import rng as rngmod
from .control import RateQuery, minimize_rate, solve_skeleton
from .control_path import ControlPath
from .errors import ConfigurationError, PreconditionError
from .noise import lipschitz_load
from .sde import IntegratorConfig, energy_bound_rhs, energy_statistics, simulate_ensemble
from .shell_core import apply_F, h_norm, inner, l4_norm, random_states, v_norm

Z95 = 1.959963984540054


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if np.isnan(x):
            return "nan"
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def digest(obj):
    """sha256 of the canonical JSON encoding of ``obj``."""
    blob = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class CheckReport:
    check_name: str
    metrics: dict
    verdict: bool
    seed: int = 0
    config_digest: str = ""
    rows: list = field(default_factory=list)
    columns: list = field(default_factory=list)

    def to_dict(self):
        return _jsonable({
            "check_name": self.check_name,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "metrics": self.metrics,
            "verdict": "pass" if self.verdict else "fail",
        })

    def write(self, out_dir, stem=None):
        """Write ``<stem>.json`` and ``<stem>.csv``; returns the two paths."""
        import os

        stem = stem or self.check_name
        jp = os.path.join(out_dir, f"{stem}.json")
        cp = os.path.join(out_dir, f"{stem}.csv")
        with open(jp, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(cp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        return jp, cp


# --------------------------------------------------------------------------
# path metric


@dataclass
class PathMetric:
    sup_h: float
    l2_v: float

    @property
    def combined(self):
        return self.sup_h + self.l2_v


def path_metric(x, y, times, grid):
    """``sup_t |x - y|^2`` and ``int ||x - y||^2 dt`` (trapezoid) on a shared grid.

    ``x`` and ``y`` have shape ``(..., R, N)``; the result arrays drop the last two axes.
    """
    d2 = np.abs(np.asarray(x) - np.asarray(y)) ** 2
    sup_h = d2.sum(axis=-1).max(axis=-1)
    l2_v = np.trapezoid((grid.k_squared * d2).sum(axis=-1), times, axis=-1)
    return sup_h, l2_v


# --------------------------------------------------------------------------
# local monotonicity


def _l4_ball_states(rng, grid, size, r):
    v = random_states(rng, grid, size)
    radius = r * rng.uniform(size=(size, 1)) ** 0.5
    return v * radius / l4_norm(v)[:, None]


def check_monotonicity(params, fam, marks, q, r, epsilon, samples=1000, seed=0, tol=1e-10):
    """Sample the local monotonicity inequality on ``u in V``, ``v`` in the l4 ball.

    The left side is ``(F(u) - F(v), w) - r^4/nu^3 |w|^2 + eps * load(u, v)``
    with ``w = u - v``; a violation is a left side above ``tol * scale``,
    ``scale`` being the sum of the magnitudes of the three terms.
    """
    nu = params.nu
    if fam.L > 0 and not epsilon < nu / (2.0 * fam.L):
        raise PreconditionError(f"need epsilon < nu/(2L) = {nu / (2 * fam.L):.6g}")
    if epsilon < 0 or r <= 0:
        raise PreconditionError("need epsilon >= 0 and r > 0")
    g = rngmod.stream(seed, 0)
    grid = params.grid
    v = _l4_ball_states(g, grid, samples, r)
    scale_u = 10.0 ** g.uniform(-3.0, 1.0, size=(samples, 1))
    w = scale_u * random_states(g, grid, samples)
    # a quarter of the pairs are nearly equal, where the quadratic term is weakest
    n_close = samples // 4
    w[:n_close] *= 1e-4
    u = v + w
    fw = inner(apply_F(u, params) - apply_F(v, params), w)
    w2 = h_norm(w) ** 2
    pen = r ** 4 / nu ** 3 * w2
    load = epsilon * lipschitz_load(u, v, fam)
    lhs = fw - pen + load
    scale = np.abs(fw) + pen + load
    bad = lhs > tol * scale
    metrics = {
        "samples": samples,
        "r": r,
        "epsilon": epsilon,
        "violations": int(bad.sum()),
        "max_normalised_lhs": float(np.max(lhs / np.where(scale > 0, scale, 1.0))),
        "family": fam.kind,
        "L": fam.L,
    }
    rows = [[i, float(lhs[i]), float(scale[i]), float(v_norm(w[i], grid))] for i in range(samples)]
    return CheckReport("monotonicity", metrics, not bad.any(), seed,
                       rows=rows, columns=["sample", "lhs", "scale", "v_norm_w"])


# --------------------------------------------------------------------------
# energy bounds


def check_energy_bounds(params, fam, marks, q, cfg, n_paths, seed, p_list=(2, 4), workers=1):
    """One-sided Monte Carlo check of the second-moment energy bound.

    At every recorded time ``t`` the estimate of ``E|u(t)|^2 + nu E int_0^t ||u||^2``
    minus three standard errors must not exceed
    ``(1 + eps K T e^{eps K T}) (|u0|^2 + nu^-1 int_0^t ||f||_{V'}^2 + eps K T)``.
    Higher moments ``E sup |u|^p`` are reported for the stability check.
    """
    ens = simulate_ensemble(params, fam, marks, q, cfg, n_paths, seed, workers=workers)
    st = energy_statistics(ens, p_list)
    rhs = np.array([energy_bound_rhs(params, fam, cfg, t) for t in st["times"]])
    lower = st["energy_balance_mean"] - 3.0 * st["energy_balance_se"]
    margin = rhs - lower
    ok = bool(np.all(margin >= 0))
    metrics = {
        "epsilon": cfg.epsilon,
        "family": fam.kind,
        "K": fam.K,
        "n_paths": n_paths,
        "censored": st["censored"],
        "min_margin": float(margin.min()),
        "rhs_T": float(rhs[-1]),
        "estimate_T": float(st["energy_balance_mean"][-1]),
        "se_T": float(st["energy_balance_se"][-1]),
        "E_sup_energy": st["E_sup_energy"],
        "E_dissipation": st["E_dissipation"],
        "E_p_moments": {str(p): v for p, v in st["E_p_moments"].items()},
    }
    rows = [[float(t), float(m), float(s), float(b)] for t, m, s, b in
            zip(st["times"], st["energy_balance_mean"], st["energy_balance_se"], rhs)]
    return CheckReport("energy", metrics, ok, seed, rows=rows,
                       columns=["t", "estimate", "se", "bound"])


def moment_ladder(params, fam, marks, q, dt, T, eps_ladder, n_paths, seed, p=4):
    """``E sup |u|^p`` along a ladder of noise levels (for the boundedness check)."""
    out = []
    for eps in eps_ladder:
        cfg = IntegratorConfig(dt, T, epsilon=eps)
        ens = simulate_ensemble(params, fam, marks, q, cfg, n_paths, seed)
        out.append(energy_statistics(ens, (p,))["E_p_moments"][p])
    return out


# --------------------------------------------------------------------------
# convergence of controlled paths to the skeleton


def check_weak_convergence(params, fam, marks, q, control, eps_ladder, n_paths, seed, dt,
                           jump_drift_weight="paper_literal", max_ratio=None, workers=1):
    """Distance between controlled stochastic paths and the skeleton along ``eps_ladder``.

    The verdict requires strictly decreasing medians and 95th percentiles and
    ``median(last) < 0.05 median(first)``; with ``max_ratio`` set, every
    consecutive median ratio must also be at most ``max_ratio``.
    """
    eps_ladder = list(eps_ladder)
    if any(b >= a for a, b in zip(eps_ladder, eps_ladder[1:])):
        raise ConfigurationError("epsilon ladder must be strictly decreasing")
    skel = solve_skeleton(params, fam, marks, q, control, dt, jump_drift_weight)
    grid = params.grid
    medians, p95, rows = [], [], []
    for eps in eps_ladder:
        cfg = IntegratorConfig(dt, control.T, epsilon=eps)
        ens = simulate_ensemble(params, fam, marks, q, cfg, n_paths, seed, control=control,
                                mode="controlled", jump_drift_weight=jump_drift_weight,
                                keep_states=True, workers=workers)
        sup_h, l2 = path_metric(ens.states, skel.states[None], ens.times, grid)
        comb = sup_h + l2
        comb = np.where(ens.blown, np.inf, comb)
        medians.append(float(np.median(comb)))
        p95.append(float(np.quantile(comb, 0.95)))
        rows += [[eps, i, float(a), float(b), float(a + b)] for i, (a, b) in enumerate(zip(sup_h, l2))]
    med = np.array(medians)
    ratios = med[1:] / med[:-1]
    ok = bool(np.all(np.diff(med) < 0) and np.all(np.diff(p95) < 0) and med[-1] < 0.05 * med[0])
    if max_ratio is not None:
        ok = ok and bool(np.all(ratios <= max_ratio))
    metrics = {
        "epsilons": eps_ladder,
        "median": medians,
        "p95": p95,
        "median_ratios": ratios.tolist(),
        "n_paths": n_paths,
        "jump_drift_weight": jump_drift_weight,
    }
    return CheckReport("weak_convergence", metrics, ok, seed, rows=rows,
                       columns=["epsilon", "path", "sup_h", "l2_v", "combined"])


def perturb_control(control, kind, delta):
    c = control.copy()
    if kind == "psi_scale":
        c.psi = (1.0 + delta) * c.psi
    elif kind == "phi_shift":
        c.phi = c.phi + delta
    else:
        raise ConfigurationError("kind must be psi_scale or phi_shift")
    return c


def check_skeleton_continuity(params, fam, marks, q, control, deltas, dt, kind="psi_scale",
                              jump_drift_weight="paper_literal", seed=0):
    """Skeleton distance under shrinking control perturbations.

    Reports ``PathMetric(u_theta, u_theta')`` per ``delta`` and the log-log
    slope; the metric is quadratic in the path change, so a slope near 2 is
    expected.  Verdict: metric strictly decreasing, slope finite and >= 1.
    """
    deltas = sorted(deltas, reverse=True)
    base = solve_skeleton(params, fam, marks, q, control, dt, jump_drift_weight)
    vals, rows = [], []
    for d in deltas:
        pert = solve_skeleton(params, fam, marks, q, perturb_control(control, kind, d), dt,
                              jump_drift_weight)
        a, b = path_metric(pert.states, base.states, base.times, params.grid)
        vals.append(float(a + b))
        rows.append([d, float(a), float(b), float(a + b)])
    vals = np.array(vals)
    pos = vals > 0
    slope = float(np.polyfit(np.log(np.array(deltas)[pos]), np.log(vals[pos]), 1)[0]) if pos.sum() >= 2 else np.nan
    ok = bool(np.all(np.diff(vals) < 0) and np.isfinite(slope) and slope >= 1.0)
    metrics = {"kind": kind, "deltas": deltas, "metric": vals.tolist(), "slope": slope,
               "ratio_per_decade": (vals[1:] / vals[:-1]).tolist()}
    return CheckReport("skeleton_continuity", metrics, ok, seed, rows=rows,
                       columns=["delta", "sup_h", "l2_v", "combined"])


# --------------------------------------------------------------------------
# rare events


@dataclass
class EventSpec:
    """``{ |u(T)|^2 >= threshold }``."""

    threshold: float
    T: float
    kind: str = "terminal_energy_above"

    def __post_init__(self):
        if self.kind != "terminal_energy_above":
            raise ConfigurationError("only terminal_energy_above events are supported")
        if not (self.threshold > 0 and self.T > 0):
            raise ConfigurationError("threshold and T must be positive")

    def hits(self, terminal):
        return np.sum(np.abs(terminal) ** 2, axis=-1) >= self.threshold

    def query(self, match_tolerance=1e-4, budget=1e3):
        return RateQuery("terminal_energy_above", self.threshold, self.T, match_tolerance, budget)


@dataclass
class RareEventEstimate:
    p_hat: float
    ci: tuple
    se: float
    n_paths: int
    hits: int
    method: str
    excluded: int = 0
    censored: int = 0
    log_p_hat: float = None

    def to_dict(self):
        return _jsonable(self.__dict__)


def wilson_interval(hits, n, level=0.95):
    ci = stats.binomtest(int(hits), int(n)).proportion_ci(level, method="wilson")
    return float(ci.low), float(ci.high)


def estimate_rare_event(event, params, fam, marks, q, cfg, n_paths, seed, importance_control=None,
                        censored_as_hit=True, workers=1):
    """Monte Carlo estimate of ``P(|u(T)|^2 >= a)``.

    Plain sampling reports a Wilson interval.  With ``importance_control`` the
    noise is drawn under the tilted law and each path carries its likelihood
    ratio; the interval is then ``p_hat +- 1.96 SE`` from the empirical
    variance.  Paths whose log weight is not finite are excluded and counted.
    Blown-up paths count as hits when ``censored_as_hit`` (the conservative
    side for upper-bound checks) and as misses otherwise.
    """
    if n_paths < 100:
        raise ConfigurationError("need at least 100 paths")
    if abs(cfg.T - event.T) > 1e-12 * event.T:
        raise ConfigurationError("event horizon differs from the integrator horizon")
    mode = "plain" if importance_control is None else "importance"
    ens = simulate_ensemble(params, fam, marks, q, cfg, n_paths, seed, control=importance_control,
                            mode=mode, workers=workers)
    hit = event.hits(ens.terminal)
    hit = np.where(ens.blown, censored_as_hit, hit)
    censored = int(ens.blown.sum())
    if mode == "plain":
        k = int(hit.sum())
        p = k / n_paths
        se = np.sqrt(p * (1 - p) / n_paths)
        return RareEventEstimate(p, wilson_interval(k, n_paths), float(se), n_paths, k, "plain",
                                 0, censored, float(np.log(p)) if p > 0 else -np.inf)
    lw = ens.log_weight
    good = np.isfinite(lw)
    excluded = int((~good).sum())
    n = int(good.sum())
    lw_hit = lw[good & hit]
    k = int(lw_hit.size)
    if k == 0:
        return RareEventEstimate(0.0, (0.0, 0.0), 0.0, n, 0, "importance", excluded, censored, -np.inf)
    log_p = float(special.logsumexp(lw_hit) - np.log(n))
    # SE in units of the largest weight to stay representable
    shift = lw_hit.max()
    wv = np.zeros(n)
    wv[: k] = np.exp(lw_hit - shift)
    rel = wv / np.exp(log_p - shift)
    rel_se = float(np.std(rel, ddof=1) / np.sqrt(n))
    p = float(np.exp(log_p))
    se = p * rel_se
    ci = (max(0.0, p - Z95 * se), p + Z95 * se)
    return RareEventEstimate(p, ci, se, n, k, "importance", excluded, censored, log_p)


# --------------------------------------------------------------------------
# exact oracles


def poisson_tail_oracle(mean, k_min):
    """``P(N >= k_min)`` for ``N ~ Poisson(mean)``."""
    return float(stats.poisson.sf(int(np.ceil(k_min)) - 1, mean))


def poisson_log_tail(mean, k_min):
    return float(stats.poisson.logsf(int(np.ceil(k_min)) - 1, mean))


def poisson_cramer_rate(mass, level):
    """``sup_theta [theta level - mass (e^theta - 1)]`` by numerical maximisation.

    This is the exponential decay rate of ``P(eps N >= level)`` for
    ``N ~ Poisson(mass / eps)``; it is computed from the cumulant generating
    function alone and serves as an independent reference.
    """
    if level <= mass:
        return 0.0
    res = optimize.minimize_scalar(lambda th: -(th * level - mass * np.expm1(th)),
                                   bounds=(0.0, 50.0), method="bounded",
                                   options={"xatol": 1e-12})
    return float(-res.fun)


def scalar_scheme_moments(u0, nu, k, dt, n_steps, s, q, epsilon):
    """Mean and per-component variance of the discrete linear scalar scheme.

    For ``u+ = (u + s sqrt(eps) dW) / (1 + dt nu k^2)`` with ``Re dW, Im dW ~ N(0, q dt)``:
    ``m = u0 r^K`` and ``var = eps s^2 q dt sum_{j=1}^K r^{2j}`` where ``r = 1/(1 + dt nu k^2)``.
    """
    r = 1.0 / (1.0 + dt * nu * k ** 2)
    G = dt * np.sum(r ** (2 * np.arange(1, n_steps + 1)))
    return u0 * r ** n_steps, epsilon * s ** 2 * q * G, G


def gaussian_tail_oracle(mean, var, threshold):
    """``P(|Z|^2 >= threshold)`` for complex ``Z`` with mean ``mean`` and
    independent real/imag parts of variance ``var`` (noncentral chi-square, 2 dof)."""
    return float(stats.ncx2.sf(threshold / var, 2, abs(mean) ** 2 / var))


def gaussian_log_tail(mean, var, threshold):
    return float(stats.ncx2.logsf(threshold / var, 2, abs(mean) ** 2 / var))


def gaussian_rate_oracle(mean, G, s, q, threshold):
    """Decay rate ``(sqrt(a) - |m|)^2 / (2 s^2 q G)`` of the scalar Gaussian tail."""
    gap = max(0.0, np.sqrt(threshold) - abs(mean))
    return gap ** 2 / (2.0 * s ** 2 * q * G)


def grid_search_gaussian_rate(affine_offset, columns, q, dtj, threshold, n_grid=401, levels=4,
                              span=None):
    """Brute-force minimum of ``1/2 sum_j psi_j^2 dt_j / q`` over real piecewise-constant ``psi``
    subject to ``|offset + sum_j psi_j columns_j|^2 >= threshold``, for two control intervals.

    Each level scans an ``n_grid x n_grid`` box and the next level zooms on the
    best point by a factor of 20.
    """
    columns = np.asarray(columns, dtype=complex)
    if columns.shape[0] != 2:
        raise ConfigurationError("the grid oracle handles exactly two control intervals")
    if span is None:
        span = 4.0 * (np.sqrt(threshold) + abs(affine_offset)) / np.min(np.abs(columns))
    centre = np.zeros(2)
    best = np.inf
    for _ in range(levels):
        g1 = centre[0] + np.linspace(-span, span, n_grid)
        g2 = centre[1] + np.linspace(-span, span, n_grid)
        P1, P2 = np.meshgrid(g1, g2, indexing="ij")
        end = affine_offset + P1 * columns[0] + P2 * columns[1]
        feas = np.abs(end) ** 2 >= threshold
        c = 0.5 * (P1 ** 2 * dtj[0] + P2 ** 2 * dtj[1]) / q
        c = np.where(feas, c, np.inf)
        i = np.unravel_index(np.argmin(c), c.shape)
        if c[i] < best:
            best = float(c[i])
            centre = np.array([P1[i], P2[i]])
        span /= 20.0
    return best, centre


# --------------------------------------------------------------------------
# decay-rate comparison


@dataclass
class DecayReport:
    epsilons: list
    probabilities: list
    cis: list
    methods: list
    eps_log_p: list
    usable: list
    extrapolated: float
    smallest_raw: float
    rate_bound: float
    relative_gap: float
    oracle_rate: float = None
    oracle_gap: float = None
    verdict: bool = False

    def to_dict(self):
        return _jsonable(self.__dict__)


def _wls_intercept(eps, y, sd):
    eps, y, sd = map(np.asarray, (eps, y, sd))
    if eps.size == 1:
        return float(y[0])
    w = 1.0 / np.maximum(sd, 1e-12 * np.abs(y).max() + 1e-300) ** 2
    X = np.c_[np.ones_like(eps), eps]
    beta = np.linalg.solve(X.T @ (w[:, None] * X), X.T @ (w * y))
    return float(beta[0])


def ldp_decay_check(event, params, fam, marks, q, dt, eps_ladder, n_paths_schedule, seed,
                    rate=None, opt=None, oracle_rate=None, min_hits=10, oracle_tol=0.10,
                    one_sided_factor=1.2, workers=1):
    """Compare the decay of ``eps log P(event)`` with the minimised rate.

    Each rung first runs plain Monte Carlo; if it sees fewer than ``min_hits``
    hits and an optimised control is available, it reruns with importance
    sampling driven by that control.  ``eps log p`` is fitted by weighted least
    squares in ``eps`` and the intercept is the extrapolated value.  ``rate``
    is a precomputed :class:`RateResult`; otherwise the optimiser runs here.

    Verdict: ``extrapolated >= -one_sided_factor * best_cost`` and, when an
    ``oracle_rate`` is supplied, ``|extrapolated + oracle| <= oracle_tol * oracle``.
    """
    eps_ladder = list(eps_ladder)
    if any(b >= a for a, b in zip(eps_ladder, eps_ladder[1:])):
        raise ConfigurationError("epsilon ladder must be strictly decreasing")
    if len(n_paths_schedule) != len(eps_ladder):
        raise ConfigurationError("one path count per rung is required")
    if rate is None:
        rate = minimize_rate(event.query(), params, fam, marks, q, opt)
    control = rate.best_control
    probs, cis, methods, ys, sds, usable = [], [], [], [], [], []
    for i, (eps, n) in enumerate(zip(eps_ladder, n_paths_schedule)):
        cfg = IntegratorConfig(dt, event.T, epsilon=eps)
        rung_seed = int(rngmod.stream(seed, i, rngmod.INIT).integers(2 ** 63))
        est = estimate_rare_event(event, params, fam, marks, q, cfg, n, rung_seed, workers=workers)
        if est.hits < min_hits and control is not None:
            ctrl = control
            if abs(control.T - event.T) > 0:
                raise ConfigurationError("control horizon differs from the event horizon")
            est = estimate_rare_event(event, params, fam, marks, q, cfg, n, rung_seed,
                                      importance_control=ctrl, workers=workers)
        ok = est.hits > 0 and est.p_hat > 0
        probs.append(est.p_hat)
        cis.append(est.ci)
        methods.append(est.method)
        usable.append(bool(ok))
        ys.append(eps * est.log_p_hat if ok else -np.inf)
        sds.append(eps * est.se / est.p_hat if ok else np.inf)
    e = np.array(eps_ladder)[usable]
    y = np.array(ys)[usable]
    sd = np.array(sds)[usable]
    extrapolated = _wls_intercept(e, y, sd) if e.size else -np.inf
    smallest = float(y[-1]) if e.size else -np.inf
    bound = rate.best_cost
    gap = abs(extrapolated + bound) / bound if np.isfinite(bound) and bound > 0 else np.inf
    verdict = bool(e.size and np.isfinite(bound) and extrapolated >= -one_sided_factor * bound)
    ogap = None
    if oracle_rate is not None:
        ogap = abs(extrapolated + oracle_rate) / oracle_rate
        verdict = verdict and ogap <= oracle_tol
    return DecayReport(eps_ladder, probs, cis, methods, ys, usable, extrapolated, smallest,
                       bound, gap, oracle_rate, ogap, verdict)
