"""Semi-implicit Euler-Maruyama integration of the stochastic shell model.

One step maps ``u`` to ``u+`` with

    (I + dt nu A) u+ = u - dt B(u, u) + dt f(t)
                       + dt sigma(u) psi + dt sum_m w(phi_m) lambda_m g(u, z_m)
                       + sqrt(eps) sigma(u) dW
                       + eps sum_{jumps in step} g(u, z)
                       - eps rho dt sum_m phi_m lambda_m g(u, z_m)

where ``rho`` is the jump-clock scale (``1/eps`` under the large-deviation
scaling, ``1`` for a unit-rate Poisson measure), the jump clock of mark ``m``
runs at ``rho phi_m lambda_m`` and ``phi = 1``, ``psi = 0`` without control.
Viscosity is implicit; everything else is frozen at the left endpoint.

All integrators work on a batch of paths at once; each path draws from its
own ``(seed, path_index)`` stream so results do not depend on batching.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .control_path import ControlPath, drift_weight
from .errors import BlowUpError, ConfigurationError, DomainError
from .noise import (
    JumpLog,
    PiecewiseConstantIntensity,
    eval_sigma,
    jump_table,
    sample_jump_times,
    sample_wiener_increments,
)
from .shell_core import as_state, nonlinear_kernel

SCHEMES = ("semi_implicit_em",)
JUMP_SCALINGS = ("ldp", "unit")


@dataclass
class IntegratorConfig:
    dt: float
    T: float
    epsilon: float = 0.0
    scheme: str = "semi_implicit_em"
    record_stride: int = 1
    jump_scaling: str = "ldp"

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise ConfigurationError("dt and T must be positive")
        if self.dt > self.T:
            raise ConfigurationError("dt must not exceed T")
        n = round(self.T / self.dt)
        if abs(n * self.dt - self.T) > 1e-9 * self.T:
            raise ConfigurationError("T must be an integer multiple of dt")
        if not self.epsilon >= 0:
            raise ConfigurationError("epsilon must be >= 0")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ConfigurationError("record_stride must be a positive integer")
        if self.jump_scaling not in JUMP_SCALINGS:
            raise ConfigurationError(f"jump_scaling must be one of {JUMP_SCALINGS}")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def rate_scale(self):
        if self.jump_scaling == "ldp" and self.epsilon > 0:
            return 1.0 / self.epsilon
        return 1.0

    def record_indices(self):
        idx = np.arange(0, self.n_steps + 1, self.record_stride)
        if idx[-1] != self.n_steps:
            idx = np.append(idx, self.n_steps)
        return idx


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    jumps: JumpLog
    energy: np.ndarray
    enstrophy: np.ndarray
    dissipation_integral: np.ndarray
    jump_counts: np.ndarray = None
    jump_drift_weight: str = None
    blowup_step: int = None
    meta: dict = field(default_factory=dict)

    @property
    def terminal(self):
        return self.states[-1]

    def to_csv(self, path):
        N = self.states.shape[1]
        header = ["t"]
        for n in range(1, N + 1):
            header += [f"re(u_{n})", f"im(u_{n})"]
        header += ["energy", "enstrophy", "dissipation_integral"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, t in enumerate(self.times):
                row = [repr(float(t))]
                for z in self.states[i]:
                    row += [repr(float(z.real)), repr(float(z.imag))]
                row += [repr(float(self.energy[i])), repr(float(self.enstrophy[i])),
                        repr(float(self.dissipation_integral[i]))]
                w.writerow(row)


@dataclass
class Ensemble:
    """Diagnostics of many paths; arrays have the path index first."""

    times: np.ndarray
    energy: np.ndarray
    enstrophy: np.ndarray
    dissipation_integral: np.ndarray
    sup_energy: np.ndarray
    terminal: np.ndarray
    blown: np.ndarray
    blowup_step: np.ndarray
    states: np.ndarray = None
    log_weight: np.ndarray = None
    n_jumps: np.ndarray = None
    nu: float = None

    @property
    def n_paths(self):
        return self.terminal.shape[0]


def _step_of_time(t, dt, n_steps):
    # jump at time t belongs to the step (t_k, t_k + dt]
    return np.clip(np.ceil(np.asarray(t) / dt).astype(int) - 1, 0, n_steps - 1)


def bin_jumps(jumps, dt, n_steps, n_marks):
    """Per-step, per-mark jump counts, shape ``(n_steps, M)``."""
    counts = np.zeros((n_steps, n_marks), dtype=np.int64)
    if len(jumps):
        np.add.at(counts, (_step_of_time(jumps.times, dt, n_steps), jumps.marks), 1)
    return counts


def path_noise(q, marks, cfg, seed, index, phi_steps=None):
    """Wiener increments, jump log and binned counts of one path."""
    K = cfg.n_steps
    if cfg.epsilon == 0:
        return None, JumpLog(np.empty(0), np.empty(0, int)), None
    dW = sample_wiener_increments(cfg.dt, q, K, rngmod.stream(seed, index, rngmod.WIENER))
    intensity = None
    if phi_steps is not None:
        intensity = PiecewiseConstantIntensity(np.arange(K + 1) * cfg.dt, phi_steps)
    jumps = sample_jump_times(
        cfg.T, marks, cfg.rate_scale, intensity, rngmod.stream(seed, index, rngmod.JUMPS)
    )
    return dW, jumps, bin_jumps(jumps, cfg.dt, K, marks.size)


def _at_step(a, k):
    return a[:, k] if a.ndim == 3 else a[k]


def integrate(*args, **kwargs):
    # censored paths may overflow before they are frozen; that is recorded, not warned
    with np.errstate(over="ignore", invalid="ignore"):
        return _integrate(*args, **kwargs)


def _integrate(params, fam, marks, cfg, u0, dW=None, counts=None, psi_steps=None,
              phi_steps=None, weight=None, compensate_with_phi=True, keep_states=True):
    """Run the stepping loop on a batch of paths.

    Parameters
    ----------
    u0 : array (P, N)
        Initial states.
    dW, counts : arrays (P, K, N) and (P, K, M), optional
        Wiener increments and binned jump counts; ignored when ``eps = 0``.
    psi_steps, phi_steps : arrays (K, N) and (K, M), optional
        Control values per step, or ``(P, K, N)`` / ``(P, K, M)`` for one
        control per path.  ``phi_steps`` sets the compensator intensity when
        ``compensate_with_phi`` is true.
    weight : str or None
        Name of the jump-drift weight ``w``; ``None`` omits the jump drift.
    """
    grid = params.grid
    u = np.array(as_state(u0, grid), dtype=complex, ndmin=2)
    P, N = u.shape
    K = cfg.n_steps
    dt, eps = cfg.dt, cfg.epsilon
    lam = marks.weights
    M = lam.shape[0]
    denom = 1.0 + dt * params.nu * grid.k_squared
    k2 = grid.k_squared
    wfun = drift_weight(weight) if weight is not None else None
    noisy = eps > 0
    if noisy and (dW is None or counts is None):
        raise ConfigurationError("noise arrays are required when epsilon > 0")
    rec = cfg.record_indices()
    R = rec.shape[0]
    energy = np.empty((P, R))
    enstrophy = np.empty((P, R))
    diss = np.empty((P, R))
    states = np.empty((P, R, N), complex) if keep_states else None
    e0 = np.sum(np.abs(u) ** 2, axis=1)
    energy[:, 0] = e0
    enstrophy[:, 0] = np.sum(k2 * np.abs(u) ** 2, axis=1)
    diss[:, 0] = 0.0
    if keep_states:
        states[:, 0] = u
    sup_e = e0.copy()
    d_acc = np.zeros(P)
    blown = np.zeros(P, bool)
    blow_step = np.full(P, -1)
    r = 1
    ones_phi = np.ones(M)
    sqrt_eps = np.sqrt(eps)
    forcing_const = params.forcing.ndim == 1
    bfun = nonlinear_kernel(params)
    additive = fam.kind == "additive"
    if additive:
        sig_const = fam.sigma_scale.astype(complex)
        g_const = fam.jump_amplitudes
    comp_scale = eps * cfg.rate_scale * dt
    for k in range(K):
        t = k * dt
        f = params.forcing if forcing_const else params.forcing_at(t)
        rhs = u - dt * bfun(u) + dt * f
        phi_k = _at_step(phi_steps, k) if phi_steps is not None else ones_phi
        if psi_steps is not None or noisy:
            sig = sig_const if additive else eval_sigma(t, u, fam)
        if psi_steps is not None:
            rhs += dt * sig * _at_step(psi_steps, k)
        coef = None
        if wfun is not None:
            coef = dt * wfun(phi_k) * lam
        if noisy:
            comp = (phi_k if compensate_with_phi else ones_phi) * lam
            jc = eps * counts[:, k] - comp_scale * comp
            coef = jc if coef is None else coef + jc
            rhs += sqrt_eps * sig * dW[:, k]
        if coef is not None:
            if additive:
                rhs += coef @ g_const
            else:
                g = jump_table(u, fam)
                rhs += np.einsum("pm,pmn->pn", np.broadcast_to(coef, (P, M)), g)
        new = rhs / denom
        bad = ~np.all(np.isfinite(new), axis=1) & ~blown
        if np.any(bad):
            blow_step[bad] = k
            blown |= bad
        if np.any(blown):
            new = np.where(blown[:, None], u, new)
        u = new
        a2 = np.abs(u) ** 2
        e = np.sum(a2, axis=1)
        ens = np.sum(k2 * a2, axis=1)
        d_acc += params.nu * dt * ens
        np.maximum(sup_e, e, out=sup_e)
        if r < R and rec[r] == k + 1:
            energy[:, r] = e
            enstrophy[:, r] = ens
            diss[:, r] = d_acc
            if keep_states:
                states[:, r] = u
            r += 1
    return {
        "times": rec * dt,
        "record_steps": rec,
        "energy": energy,
        "enstrophy": enstrophy,
        "dissipation_integral": diss,
        "states": states,
        "sup_energy": sup_e,
        "terminal": u,
        "blown": blown,
        "blowup_step": blow_step,
    }


def _single(out, jumps, counts, weight, meta):
    traj = Trajectory(
        times=out["times"],
        states=out["states"][0],
        jumps=jumps,
        energy=out["energy"][0],
        enstrophy=out["enstrophy"][0],
        dissipation_integral=out["dissipation_integral"][0],
        jump_counts=None if counts is None else counts.sum(axis=1),
        jump_drift_weight=weight,
        meta=meta,
    )
    if out["blown"][0]:
        step = int(out["blowup_step"][0])
        # recorded nodes up to and including the last finite state
        keep = out["record_steps"] <= step
        traj.blowup_step = step
        for name in ("times", "states", "energy", "enstrophy", "dissipation_integral"):
            setattr(traj, name, getattr(traj, name)[keep])
        raise BlowUpError(step, traj)
    return traj


def step(u, t, dW, jumps_in_step, params, fam, marks, cfg, psi=None, phi=None, weight=None):
    """Advance one path by one step; ``jumps_in_step`` lists mark indices."""
    counts = np.zeros((1, 1, marks.size))
    for m in np.atleast_1d(np.asarray(jumps_in_step, dtype=int)):
        counts[0, 0, m] += 1
    one = IntegratorConfig(cfg.dt, cfg.dt, cfg.epsilon, cfg.scheme, 1, cfg.jump_scaling)
    if params.forcing.ndim == 2:
        from dataclasses import replace

        params = replace(params, forcing=params.forcing_at(t), forcing_times=None)
    dWa = None if dW is None else np.asarray(dW, complex)[None, None, :]
    if cfg.epsilon > 0 and dWa is None:
        dWa = np.zeros((1, 1, params.grid.n_shells), complex)
    out = integrate(
        params, fam, marks, one, np.asarray(u)[None], dWa, counts,
        None if psi is None else np.asarray(psi, complex)[None],
        None if phi is None else np.asarray(phi, float)[None],
        weight=weight,
    )
    if out["blown"][0]:
        raise BlowUpError(0)
    return out["terminal"][0]


def simulate(params, fam, marks, q, cfg, seed, path_index=0):
    """One path of the uncontrolled equation; deterministic in ``(seed, configs)``."""
    dW, jumps, counts = path_noise(q, marks, cfg, seed, path_index)
    out = integrate(params, fam, marks, cfg, params.u0[None],
                    None if dW is None else dW[None], None if counts is None else counts[None])
    return _single(out, jumps, counts, None, {"seed": seed, "path_index": path_index})


def _check_control(control, params, marks, cfg):
    if not isinstance(control, ControlPath):
        raise ConfigurationError("control must be a ControlPath")
    if control.psi.shape[1] != params.grid.n_shells or control.phi.shape[1] != marks.size:
        raise ConfigurationError("control does not match the grid / mark space")
    if abs(control.T - cfg.T) > 1e-12 * cfg.T:
        raise ConfigurationError("control horizon differs from the integrator horizon")
    if np.any(control.phi < 0):
        raise DomainError("phi must be nonnegative")


def simulate_controlled(params, fam, marks, q, cfg, control, seed,
                        jump_drift_weight="paper_literal", path_index=0):
    """One path of the controlled equation with jump clock ``rho phi lambda``."""
    _check_control(control, params, marks, cfg)
    psi_s, phi_s = control.on_steps(cfg.dt, cfg.n_steps)
    dW, jumps, counts = path_noise(q, marks, cfg, seed, path_index, phi_s)
    out = integrate(params, fam, marks, cfg, params.u0[None],
                    None if dW is None else dW[None], None if counts is None else counts[None],
                    psi_s, phi_s, weight=jump_drift_weight)
    return _single(out, jumps, counts, jump_drift_weight,
                   {"seed": seed, "path_index": path_index})


def _chunk_worker(args):
    (params, fam, marks, q, cfg, seed, lo, hi, psi_s, phi_s, weight, mode, keep_states) = args
    P = hi - lo
    K, N, M = cfg.n_steps, params.grid.n_shells, marks.size
    noisy = cfg.epsilon > 0
    dW = np.zeros((P, K, N), complex) if noisy else None
    counts = np.zeros((P, K, M), np.int64) if noisy else None
    logw = np.zeros(P) if mode == "importance" else None
    n_jumps = np.zeros(P, np.int64)
    clock_phi = phi_s if mode in ("controlled", "importance") else None
    for i in range(P):
        w, jumps, c = path_noise(q, marks, cfg, seed, lo + i, clock_phi)
        if noisy:
            dW[i], counts[i] = w, c
        n_jumps[i] = len(jumps)
        if mode == "importance":
            logw[i] = _log_likelihood_ratio(w, jumps, psi_s, phi_s, q, marks, cfg)
    if mode == "importance":
        out = integrate(params, fam, marks, cfg, np.broadcast_to(params.u0, (P, N)), dW, counts,
                        psi_s, phi_s, weight=None, compensate_with_phi=False,
                        keep_states=keep_states)
    elif mode == "controlled":
        out = integrate(params, fam, marks, cfg, np.broadcast_to(params.u0, (P, N)), dW, counts,
                        psi_s, phi_s, weight=weight, keep_states=keep_states)
    else:
        out = integrate(params, fam, marks, cfg, np.broadcast_to(params.u0, (P, N)), dW, counts,
                        keep_states=keep_states)
    out["log_weight"] = logw
    out["n_jumps"] = n_jumps
    return out


def _log_likelihood_ratio(dW, jumps, psi_s, phi_s, q, marks, cfg):
    """``log dP/dQ`` for noise sampled under the tilted law ``Q``.

    Under ``Q`` the Wiener increments are shifted by ``psi dt / sqrt(eps)`` and
    mark ``m`` fires at ``rho phi_m lambda_m`` instead of ``rho lambda_m``.
    """
    eps, dt = cfg.epsilon, cfg.dt
    pos = q.q > 0
    qq = q.q[pos]
    ps = psi_s[:, pos]
    lw = -np.sum(np.real(np.conj(ps) * dW[:, pos]) / qq) / np.sqrt(eps)
    lw -= 0.5 / eps * dt * np.sum(np.abs(ps) ** 2 / qq)
    if len(jumps):
        k = _step_of_time(jumps.times, dt, cfg.n_steps)
        lw -= np.sum(np.log(phi_s[k, jumps.marks]))
    lw += cfg.rate_scale * dt * np.sum((phi_s - 1.0) @ marks.weights)
    return lw


def simulate_ensemble(params, fam, marks, q, cfg, n_paths, seed, control=None,
                      mode="plain", jump_drift_weight="paper_literal", keep_states=False,
                      workers=1, chunk=128):
    """Run ``n_paths`` independent paths.

    ``mode`` is ``"plain"`` (uncontrolled), ``"controlled"`` (the controlled
    equation with drift weight ``jump_drift_weight``) or ``"importance"``
    (the *uncontrolled* equation driven by noise tilted by ``control``, with
    per-path log likelihood ratios in ``log_weight``).  Path ``i`` uses the
    streams ``(seed, i)``; chunks are reassembled in path order, so the
    result does not depend on ``workers`` or ``chunk``.
    """
    if mode not in ("plain", "controlled", "importance"):
        raise ConfigurationError("mode must be plain, controlled or importance")
    if n_paths < 1:
        raise ConfigurationError("n_paths must be >= 1")
    psi_s = phi_s = None
    if mode != "plain":
        if control is None:
            raise ConfigurationError(f"mode {mode!r} needs a control")
        _check_control(control, params, marks, cfg)
        psi_s, phi_s = control.on_steps(cfg.dt, cfg.n_steps)
        if mode == "importance":
            if cfg.epsilon <= 0:
                raise ConfigurationError("importance sampling needs epsilon > 0")
            if np.any(np.abs(psi_s[:, q.q == 0]) > 0):
                raise DomainError("psi charges modes outside the Cameron-Martin space")
    bounds = list(range(0, n_paths, chunk)) + [n_paths]
    jobs = [(params, fam, marks, q, cfg, seed, lo, hi, psi_s, phi_s, jump_drift_weight, mode,
             keep_states) for lo, hi in zip(bounds[:-1], bounds[1:])]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_chunk_worker, jobs))
    else:
        parts = [_chunk_worker(j) for j in jobs]

    def cat(name):
        if parts[0][name] is None:
            return None
        return np.concatenate([p[name] for p in parts])

    return Ensemble(
        times=parts[0]["times"],
        energy=cat("energy"),
        enstrophy=cat("enstrophy"),
        dissipation_integral=cat("dissipation_integral"),
        sup_energy=cat("sup_energy"),
        terminal=cat("terminal"),
        blown=cat("blown"),
        blowup_step=cat("blowup_step"),
        states=cat("states") if keep_states else None,
        log_weight=cat("log_weight"),
        n_jumps=cat("n_jumps"),
        nu=params.nu,
    )


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    se = x.std(ddof=1) / np.sqrt(n) if n > 1 else np.inf
    return float(x.mean()), float(se)


def energy_statistics(ensemble, p_list=(2,)):
    """Monte Carlo means and standard errors of the energy functionals.

    Returns ``E_sup_energy``, ``E_dissipation`` (``nu int_0^T ||u||^2``),
    ``E_p_moments[p]`` (``E sup_t |u(t)|^p``) and the per-time curve
    ``energy_balance`` of ``E|u(t)|^2 + nu int_0^t E||u||^2``.  Censored
    (blown-up) paths are excluded and counted.
    """
    ok = ~ensemble.blown
    if not np.any(ok):
        raise ConfigurationError("every path blew up")
    lhs = ensemble.energy[ok] + ensemble.dissipation_integral[ok]
    n = lhs.shape[0]
    return {
        "E_sup_energy": _mean_se(ensemble.sup_energy[ok]),
        "E_dissipation": _mean_se(ensemble.dissipation_integral[ok, -1]),
        "E_p_moments": {p: _mean_se(ensemble.sup_energy[ok] ** (p / 2)) for p in p_list},
        "energy_balance_mean": lhs.mean(axis=0),
        "energy_balance_se": lhs.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full(lhs.shape[1], np.inf),
        "times": ensemble.times,
        "censored": int((~ok).sum()),
        "n_paths": int(ensemble.n_paths),
    }


def energy_bound_rhs(params, fam, cfg, t=None):
    """``(1 + eps K T e^{eps K T}) (|u0|^2 + nu^-1 int_0^t ||f||_{V'}^2 + eps K T)``."""
    t = cfg.T if t is None else t
    eKT = cfg.epsilon * fam.K * cfg.T
    e0 = float(np.sum(np.abs(params.u0) ** 2))
    return (1.0 + eKT * np.exp(eKT)) * (e0 + params.forcing_dual_integral(t) / params.nu + eKT)
