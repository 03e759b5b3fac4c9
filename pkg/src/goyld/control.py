"""Skeleton equation, control costs and numerical minimisation of the rate function.

Every finite number returned here is an *upper bound* on the rate function:
it is the cost of an explicit piecewise-constant control whose skeleton path
satisfies the query.
"""

from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .control_path import (
    DRIFT_WEIGHTS,
    ControlPath,
    CostBreakdown,
    cost,
    drift_weight,
    ell,
    ell_prime,
)
from .errors import BlowUpError, ConfigurationError
from .sde import IntegratorConfig, Trajectory, _check_control, integrate
from .noise import JumpLog

__all__ = [
    "ControlPath",
    "CostBreakdown",
    "DRIFT_WEIGHTS",
    "OptimizerConfig",
    "RateQuery",
    "RateResult",
    "cost",
    "ell",
    "ell_prime",
    "minimize_rate",
    "rate_upper_bound",
    "skeleton_terminal",
    "solve_skeleton",
]

QUERY_KINDS = ("terminal_state", "terminal_energy_above")


def _skeleton_cfg(T, dt):
    return IntegratorConfig(dt=dt, T=T, epsilon=0.0)


def solve_skeleton(params, fam, marks, q, control, dt, jump_drift_weight="paper_literal"):
    """Deterministic controlled path with the noise switched off.

    Solves ``du/dt = -nu A u - B(u, u) + f + sigma(u) psi + sum_m g(u, z_m) w(phi_m) lambda_m``
    with the same semi-implicit step as the stochastic integrator.
    """
    drift_weight(jump_drift_weight)
    cfg = _skeleton_cfg(control.T, dt)
    _check_control(control, params, marks, cfg)
    psi_s, phi_s = control.on_steps(dt, cfg.n_steps)
    out = integrate(params, fam, marks, cfg, params.u0[None], psi_steps=psi_s, phi_steps=phi_s,
                    weight=jump_drift_weight)
    traj = Trajectory(
        times=out["times"],
        states=out["states"][0],
        jumps=JumpLog(np.empty(0), np.empty(0, int)),
        energy=out["energy"][0],
        enstrophy=out["enstrophy"][0],
        dissipation_integral=out["dissipation_integral"][0],
        jump_drift_weight=jump_drift_weight,
    )
    if out["blown"][0]:
        traj.blowup_step = int(out["blowup_step"][0])
        raise BlowUpError(traj.blowup_step, traj)
    return traj


def skeleton_terminal(params, fam, marks, T, dt, psi_steps, phi_steps, jump_drift_weight):
    """Terminal states of a batch of skeleton paths; ``nan`` rows where a path blew up."""
    cfg = _skeleton_cfg(T, dt)
    P = psi_steps.shape[0]
    u0 = np.broadcast_to(params.u0, (P, params.grid.n_shells))
    out = integrate(params, fam, marks, cfg, u0, psi_steps=psi_steps, phi_steps=phi_steps,
                    weight=jump_drift_weight, keep_states=False)
    term = out["terminal"].copy()
    term[out["blown"]] = np.nan
    return term


@dataclass
class RateQuery:
    """Terminal target for the rate function.

    ``terminal_state``: ``|u(T) - target| <= match_tolerance``.
    ``terminal_energy_above``: ``|u(T)|^2 >= target - match_tolerance``.
    Controls with total cost above ``budget`` are rejected outright.
    """

    target_kind: str
    target: object
    T: float
    match_tolerance: float = 1e-3
    budget: float = 1e3

    def __post_init__(self):
        if self.target_kind not in QUERY_KINDS:
            raise ConfigurationError(f"target_kind must be one of {QUERY_KINDS}")
        if not self.match_tolerance > 0:
            raise ConfigurationError("match_tolerance must be positive")
        if not (np.isfinite(self.budget) and self.budget >= 0):
            raise ConfigurationError("budget must be finite and nonnegative")
        if not self.T > 0:
            raise ConfigurationError("T must be positive")
        if self.target_kind == "terminal_state":
            self.target = np.asarray(self.target, dtype=complex)
        else:
            self.target = float(self.target)
            if not self.target > 0:
                raise ConfigurationError("energy threshold must be positive")

    def violation(self, terminal):
        """Distance from the target set, batched over leading axes (``inf`` for ``nan``)."""
        terminal = np.asarray(terminal, dtype=complex)
        if self.target_kind == "terminal_state":
            d = np.sqrt(np.sum(np.abs(terminal - self.target) ** 2, axis=-1))
        else:
            d = np.maximum(0.0, self.target - np.sum(np.abs(terminal) ** 2, axis=-1))
        return np.where(np.isnan(d), np.inf, d)

    @property
    def scale(self):
        if self.target_kind == "terminal_state":
            return max(1.0, float(np.sqrt(np.sum(np.abs(self.target) ** 2))))
        return max(1.0, self.target)


def rate_upper_bound(query, control, params, fam, marks, q, dt=1e-3,
                     jump_drift_weight="paper_literal"):
    """``cost(control).total`` if the skeleton meets ``query``, else ``inf``."""
    c = cost(control, marks, q).total
    if not c <= query.budget:
        return np.inf
    try:
        traj = solve_skeleton(params, fam, marks, q, control, dt, jump_drift_weight)
    except BlowUpError:
        return np.inf
    return c if query.violation(traj.terminal) <= query.match_tolerance else np.inf


@dataclass
class OptimizerConfig:
    n_nodes: int = 4
    dt: float = 1e-3
    max_iter: int = 200
    restarts: int = 2
    phi_min: float = 1e-6
    phi_max: float = 50.0
    beta0: float = None
    max_stages: int = 30
    fd_step: float = 1e-6
    xtol: float = 1e-10
    ftol: float = 1e-10
    init_scale: float = 0.5
    jump_drift_weight: str = "paper_literal"
    marks_off: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 1 or self.max_iter < 1 or self.restarts < 1:
            raise ConfigurationError("n_nodes, max_iter and restarts must be >= 1")
        if not (0 < self.phi_min < self.phi_max < np.inf):
            raise ConfigurationError("need 0 < phi_min < phi_max < inf")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        drift_weight(self.jump_drift_weight)


@dataclass
class RateResult:
    best_control: ControlPath
    best_cost: float
    breakdown: CostBreakdown
    feasible: bool
    violation: float
    trace: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    jump_drift_weight: str = "paper_literal"

    def to_dict(self):
        return {
            "best_cost": self.best_cost if np.isfinite(self.best_cost) else "inf",
            "cost": self.breakdown.to_dict() if self.breakdown else None,
            "feasible": self.feasible,
            "violation": float(self.violation),
            "jump_drift_weight": self.jump_drift_weight,
            "control": self.best_control.to_dict() if self.best_control is not None else None,
            "trace": [[int(s), float(b), float(v)] for s, b, v in self.trace],
            "diagnostics": self.diagnostics,
        }


class _Problem:
    """Flat parametrisation ``x = [Re psi, Im psi, phi]`` over the active entries.

    Only shells with ``q_n > 0`` and a nonzero diffusion scale carry a Gaussian
    control (``psi`` elsewhere costs infinity or does nothing) and marks
    switched off carry none.
    """

    def __init__(self, query, params, fam, marks, q, opt):
        self.query, self.params, self.fam, self.marks, self.q, self.opt = (
            query, params, fam, marks, q, opt)
        N, M, J = params.grid.n_shells, marks.size, opt.n_nodes
        self.N, self.M, self.J = N, M, J
        self.edges = np.linspace(0.0, query.T, J + 1)
        self.cfg = _skeleton_cfg(query.T, opt.dt)
        self.K = self.cfg.n_steps
        self.node_of_step = ControlPath.null(query.T, J, N, M).index_at((np.arange(self.K) + 0.5) * opt.dt)
        self.shells = np.flatnonzero((q.q > 0) & (fam.sigma_scale != 0))
        off = np.zeros(M, bool)
        for z in opt.marks_off:
            off[marks.index(z)] = True
        self.off = off
        self.mk = np.flatnonzero(~off)
        na, ma = self.shells.size, self.mk.size
        self.n_psi = J * na
        self.dim = 2 * self.n_psi + J * ma
        self.lo = np.r_[np.full(2 * self.n_psi, -np.inf), np.full(J * ma, opt.phi_min)]
        self.hi = np.r_[np.full(2 * self.n_psi, np.inf), np.full(J * ma, opt.phi_max)]
        self.dtj = np.diff(self.edges)
        self.lam = marks.weights
        self.weight = opt.jump_drift_weight

    def project(self, x):
        return np.clip(x, self.lo, self.hi)

    def unpack(self, X):
        X = np.atleast_2d(X)
        P = X.shape[0]
        na = self.shells.size
        psi = np.zeros((P, self.J, self.N), complex)
        psi[:, :, self.shells] = (X[:, : self.n_psi] + 1j * X[:, self.n_psi: 2 * self.n_psi]).reshape(P, self.J, na)
        phi = np.ones((P, self.J, self.M))
        phi[:, :, self.off] = 0.0
        phi[:, :, self.mk] = X[:, 2 * self.n_psi:].reshape(P, self.J, self.mk.size)
        return psi, phi

    def pack(self, control):
        a = control.psi[:, self.shells]
        return np.r_[a.real.ravel(), a.imag.ravel(), control.phi_effective[:, self.mk].ravel()]

    def control(self, x):
        psi, phi = self.unpack(x)
        return ControlPath(self.edges, psi[0], np.where(self.off, 1.0, phi[0]), self.off.copy())

    def costs(self, X):
        psi, phi = self.unpack(X)
        qa = self.q.q[self.shells]
        g = 0.5 * np.sum(self.dtj[None, :, None] * np.abs(psi[:, :, self.shells]) ** 2 / qa, axis=(1, 2))
        j = np.sum(self.dtj[None, :, None] * ell(phi) * self.lam, axis=(1, 2))
        return g + j

    def violations(self, X):
        psi, phi = self.unpack(X)
        term = skeleton_terminal(self.params, self.fam, self.marks, self.query.T, self.opt.dt,
                                 psi[:, self.node_of_step], phi[:, self.node_of_step], self.weight)
        return self.query.violation(term)

    def objective(self, X, beta):
        c = self.costs(X)
        v = self.violations(X)
        f = c + beta * v ** 2
        f = np.where(c > self.query.budget, np.inf, f)
        return f, c, v

    def gradient(self, x, beta):
        """Central differences, all perturbed controls integrated as one batch."""
        h = self.opt.fd_step * np.maximum(1.0, np.abs(x))
        E = np.eye(self.dim) * h
        Xp = self.project(x + E)
        Xm = self.project(x - E)
        X = np.vstack([Xp, Xm])
        c = self.costs(X)
        v = self.violations(X)
        f = c + beta * np.where(np.isfinite(v), v, 0.0) ** 2
        step = np.diag(Xp - Xm)
        step = np.where(step > 0, step, 1.0)
        return (f[: self.dim] - f[self.dim:]) / step


def _pg_stage(prob, x, beta, max_iter, trace, stage):
    """Projected gradient with Barzilai-Borwein steps and Armijo backtracking."""
    opt = prob.opt
    f, _, _ = prob.objective(x, beta)
    f = float(f[0])
    if not np.isfinite(f):
        return x, f
    g = prob.gradient(x, beta)
    alpha = 1.0 / max(1.0, np.linalg.norm(g))
    trace.append((stage, beta, f))
    for _ in range(max_iter):
        accepted = False
        for _ in range(40):
            xn = prob.project(x - alpha * g)
            d = xn - x
            if not np.any(d):
                break
            fn = float(prob.objective(xn, beta)[0][0])
            if fn <= f - 1e-4 / alpha * float(d @ d):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        gn = prob.gradient(xn, beta)
        s, y = xn - x, gn - g
        sy = float(s @ y)
        alpha = float(s @ s) / sy if sy > 0 else alpha * 2.0
        alpha = min(max(alpha, 1e-10), 1e10)
        done = (np.linalg.norm(s) <= opt.xtol * (1.0 + np.linalg.norm(x))
                or f - fn <= opt.ftol * max(1.0, abs(f)))
        x, f, g = xn, fn, gn
        trace.append((stage, beta, f))
        if done:
            break
    return x, f


def minimize_rate(query, params, fam, marks, q, opt=None):
    """Numerical infimum of the control cost over controls meeting ``query``.

    Penalised objective ``cost + beta * dist(query)^2`` minimised by projected
    gradient descent; ``beta`` doubles between stages until the distance is
    within ``query.match_tolerance``.  Restart 0 starts from the null control,
    later restarts from random controls with ``phi`` above 1 (odd restarts)
    or below 1 (even restarts).  Returns ``best_cost = inf`` if no
    restart reaches a feasible control.
    """
    opt = opt or OptimizerConfig()
    prob = _Problem(query, params, fam, marks, q, opt)
    beta0 = opt.beta0 if opt.beta0 is not None else 10.0 / query.scale ** 2
    best = None
    trace = []
    runs = []
    for r in range(opt.restarts):
        if r == 0:
            x = prob.pack(ControlPath.null(query.T, opt.n_nodes, prob.N, prob.M))
        else:
            g = rngmod.stream(opt.seed, r, rngmod.OPTIMIZER)
            # w = ell is flat at phi = 1, so restarts alternate between phi > 1 and phi < 1
            side = 1.0 if r % 2 else -1.0
            z = np.abs(g.standard_normal(prob.dim - 2 * prob.n_psi)) + 0.5
            x = np.r_[opt.init_scale * g.standard_normal(2 * prob.n_psi),
                      np.exp(side * opt.init_scale * z)]
            x = prob.project(x)
        beta = beta0
        for stage in range(opt.max_stages):
            x, _ = _pg_stage(prob, x, beta, opt.max_iter, trace, len(runs) * 1000 + stage)
            v = float(prob.violations(x)[0])
            if v <= query.match_tolerance:
                break
            beta *= 2.0
        c = float(prob.costs(x)[0])
        feasible = v <= query.match_tolerance and c <= query.budget
        runs.append({"restart": r, "cost": c, "violation": v, "feasible": bool(feasible),
                     "stages": stage + 1, "final_beta": beta})
        if feasible and (best is None or c < best[1]):
            best = (x, c, v)
    diagnostics = {"restarts": runs, "free_parameters": prob.dim}
    if best is None:
        closest = min(runs, key=lambda d: d["violation"])
        diagnostics["closest_violation"] = closest["violation"]
        return RateResult(None, np.inf, None, False, closest["violation"], trace, diagnostics,
                          opt.jump_drift_weight)
    x, c, v = best
    control = prob.control(x)
    return RateResult(control, c, cost(control, marks, q), True, v, trace, diagnostics,
                      opt.jump_drift_weight)
