"""Q-Wiener increments, Poisson random measures and the coefficient families.

Conventions
-----------
``H`` is the complex shell space viewed as a *real* Hilbert space with basis
``{e_n, i e_n}``.  A diagonal covariance ``q`` acts with eigenvalue ``q_n`` on
both ``e_n`` and ``i e_n``, so the real and imaginary parts of a Wiener
increment on shell ``n`` each have variance ``q_n dt``.  Consequently

* ``|sigma|_{L_Q}^2 = 2 sum_n q_n |sigma_n|^2`` for a diagonal ``sigma``;
* ``||psi||_0^2 = sum_n |psi_n|^2 / q_n`` on the Cameron-Martin space.

The mark space is a finite set with positive weights ``lambda(z_m)``.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError
from .rng import stream

FAMILY_KINDS = ("additive", "diagonal_multiplicative", "saturated_multiplicative")


@dataclass
class CovarianceQ:
    q: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        if self.q.ndim != 1:
            raise ConfigurationError("q must be a vector")
        if np.any(self.q < 0) or not np.all(np.isfinite(self.q)):
            raise ConfigurationError("q must be finite and nonnegative")
        if not np.any(self.q > 0):
            raise ConfigurationError("q needs at least one positive entry")

    @property
    def trace(self):
        return 2.0 * self.q.sum()

    def cm_norm_sq(self, psi):
        """``||psi||_0^2``; infinite if ``psi`` charges a mode with ``q_n = 0``."""
        psi = np.asarray(psi, dtype=complex)
        a2 = np.abs(psi) ** 2
        pos = self.q > 0
        if np.any(a2[..., ~pos] > 0):
            return np.inf
        return np.sum(a2[..., pos] / self.q[pos], axis=-1)


@dataclass
class MarkSpace:
    labels: list
    weights: np.ndarray

    def __post_init__(self):
        self.labels = [str(x) for x in self.labels]
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.labels) != self.weights.shape[0] or self.weights.ndim != 1:
            raise ConfigurationError("one weight per mark label is required")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigurationError("mark labels must be unique")
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.weights)):
            raise ConfigurationError("mark weights must be positive and finite")

    @property
    def size(self):
        return len(self.labels)

    @property
    def total_mass(self):
        return float(self.weights.sum())

    def index(self, z):
        if isinstance(z, (int, np.integer)) and not isinstance(z, bool):
            if 0 <= z < self.size:
                return int(z)
        elif str(z) in self.labels:
            return self.labels.index(str(z))
        raise DomainError(f"unknown mark {z!r}")


def _saturate(u):
    return u / (1.0 + np.abs(u))


@dataclass
class CoefficientFamily:
    """Diffusion ``sigma`` and jump ``g`` drawn from a fixed menu.

    ``additive``: ``sigma_n = s_n``, ``g(u, z_m) = c_m``.
    ``diagonal_multiplicative``: ``sigma_n = s_n u_n``, ``g(u, z_m)_n = c_mn u_n``.
    ``saturated_multiplicative``: as above with ``u_n`` replaced by
    ``u_n / (1 + |u_n|)``, a 1-Lipschitz map of the plane.

    The growth constant ``K`` and Lipschitz constant ``L`` are derived here from
    the per-shell load ``kappa_n = 2 q_n s_n^2 + sum_m lambda_m |c_mn|^2``.
    """

    kind: str
    sigma_scale: np.ndarray
    jump_amplitudes: np.ndarray
    q: CovarianceQ
    marks: MarkSpace
    K: float = field(init=False)
    L: float = field(init=False)

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ConfigurationError(f"family kind must be one of {FAMILY_KINDS}")
        N = self.q.q.shape[0]
        self.sigma_scale = np.asarray(self.sigma_scale, dtype=float)
        if self.sigma_scale.shape != (N,):
            raise ConfigurationError("sigma_scale must have one entry per shell")
        c = np.asarray(self.jump_amplitudes, dtype=complex)
        if c.shape != (self.marks.size, N):
            raise ConfigurationError("jump_amplitudes must have shape (marks, shells)")
        self.jump_amplitudes = c
        if not (np.all(np.isfinite(self.sigma_scale)) and np.all(np.isfinite(c))):
            raise ConfigurationError("coefficients must be finite")
        kappa = self.shell_load
        if self.kind == "additive":
            self.K, self.L = float(kappa.sum()), 0.0
        else:
            self.K = self.L = float(kappa.max())

    @property
    def n_shells(self):
        return self.sigma_scale.shape[0]

    @property
    def shell_load(self):
        lam = self.marks.weights[:, None]
        return 2.0 * self.q.q * self.sigma_scale ** 2 + np.sum(lam * np.abs(self.jump_amplitudes) ** 2, axis=0)

    def K1(self, p):
        """Constant of the p-th moment growth bound ``K1 (1 + |u|^p)``."""
        lam = self.marks.weights
        cabs = np.abs(self.jump_amplitudes)
        if self.kind == "additive":
            sig = (2.0 * np.sum(self.q.q * self.sigma_scale ** 2)) ** (p / 2)
            jump = np.sum(lam * np.sqrt(np.sum(cabs ** 2, axis=1)) ** p)
        else:
            sig = (2.0 * np.max(self.q.q * self.sigma_scale ** 2)) ** (p / 2)
            jump = np.sum(lam * cabs.max(axis=1) ** p)
        return float(sig + jump)

    def shape_of_state(self, u):
        if self.kind == "additive":
            return np.ones_like(u)
        if self.kind == "diagonal_multiplicative":
            return u
        return _saturate(u)


def eval_sigma(t, u, fam):
    """Diagonal of ``sigma(t, u)`` acting on ``H_0`` (time independent here)."""
    u = np.asarray(u, dtype=complex)
    if fam.kind == "additive":
        return np.broadcast_to(fam.sigma_scale.astype(complex), u.shape).copy()
    return fam.sigma_scale * fam.shape_of_state(u)


def jump_table(u, fam):
    """``g(u, z_m)`` for every mark, shape ``(..., M, N)``."""
    u = np.asarray(u, dtype=complex)
    h = fam.shape_of_state(u)
    return fam.jump_amplitudes * h[..., None, :]


def eval_jump_coefficient(u, z, fam):
    """``g(u, z)`` for a single mark label or index."""
    m = fam.marks.index(z)
    return jump_table(u, fam)[..., m, :]


def sigma_lq_sq(sig, q):
    """``|sigma|_{L_Q}^2`` for a diagonal ``sigma``."""
    return 2.0 * np.sum(q.q * np.abs(sig) ** 2, axis=-1)


def jump_sq_sum(gtab, marks):
    """``sum_m |g(u, z_m)|^2 lambda(z_m)``."""
    return np.sum(marks.weights * np.sum(np.abs(gtab) ** 2, axis=-1), axis=-1)


def growth_load(u, fam):
    return sigma_lq_sq(eval_sigma(0.0, u, fam), fam.q) + jump_sq_sum(jump_table(u, fam), fam.marks)


def lipschitz_load(u, v, fam):
    ds = eval_sigma(0.0, u, fam) - eval_sigma(0.0, v, fam)
    dg = jump_table(u, fam) - jump_table(v, fam)
    return sigma_lq_sq(ds, fam.q) + jump_sq_sum(dg, fam.marks)


@dataclass
class HypothesisAudit:
    K_hat: float
    L_hat: float
    K: float
    L: float
    passed: bool
    samples: int
    seed: int


def _audit_states(rng, n, size):
    z = rng.standard_normal((size, n, 2)) / np.sqrt(2.0)
    scale = 10.0 ** rng.uniform(-2.0, 2.0, size=(size, 1))
    return scale * (z[..., 0] + 1j * z[..., 1])


def audit_hypotheses(fam, marks=None, samples=1000, seed=0):
    """Measure the growth and Lipschitz ratios on random states.

    ``K_hat = max (|sigma|^2_{L_Q} + sum |g|^2 lambda) / (1 + |u|^2)`` and
    ``L_hat = max`` of the difference load over ``|u - v|^2``.  Half of the
    Lipschitz pairs are close (``|u - v|`` small) to probe local slopes.
    """
    if samples < 1:
        raise DomainError("samples must be >= 1")
    if marks is not None and marks is not fam.marks:
        if marks.labels != fam.marks.labels or not np.allclose(marks.weights, fam.marks.weights):
            raise ConfigurationError("family was built for a different mark space")
    rng = stream(seed, 0)
    N = fam.n_shells
    u = _audit_states(rng, N, samples)
    growth = growth_load(u, fam) / (1.0 + np.sum(np.abs(u) ** 2, axis=-1))
    v = _audit_states(rng, N, samples)
    half = samples // 2
    v[:half] = u[:half] + 1e-3 * _audit_states(rng, N, half)
    d2 = np.sum(np.abs(u - v) ** 2, axis=-1)
    lip = lipschitz_load(u, v, fam) / d2
    K_hat, L_hat = float(growth.max()), float(lip.max())
    slack = 1e-12
    passed = K_hat <= fam.K * (1 + slack) + slack and L_hat <= fam.L * (1 + slack) + slack
    return HypothesisAudit(K_hat, L_hat, fam.K, fam.L, bool(passed), samples, seed)


def sample_wiener_increment(dt, q, rng):
    """One Q-Wiener increment over a step of length ``dt``.

    Real and imaginary parts on shell ``n`` are independent ``N(0, q_n dt)``.
    """
    if not dt > 0:
        raise DomainError("dt must be positive")
    qv = q.q if isinstance(q, CovarianceQ) else np.asarray(q, dtype=float)
    z = rng.standard_normal((qv.shape[0], 2))
    s = np.sqrt(qv * dt)
    return s * (z[:, 0] + 1j * z[:, 1])


def sample_wiener_increments(dt, q, n_steps, rng):
    """``n_steps`` consecutive increments, shape ``(n_steps, N)``."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    qv = q.q if isinstance(q, CovarianceQ) else np.asarray(q, dtype=float)
    z = rng.standard_normal((n_steps, qv.shape[0], 2))
    s = np.sqrt(qv * dt)
    return s * (z[..., 0] + 1j * z[..., 1])


@dataclass
class JumpLog:
    times: np.ndarray
    marks: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.marks = np.asarray(self.marks, dtype=int)

    def __len__(self):
        return self.times.shape[0]

    def to_csv(self, path, mark_space=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mark"])
            for t, m in zip(self.times, self.marks):
                w.writerow([repr(float(t)), mark_space.labels[m] if mark_space else int(m)])


class PiecewiseConstantIntensity:
    """``phi(t, z_m)`` constant on ``[edges[j], edges[j+1])``.

    ``values`` has shape ``(J, M)``; ``bound`` is ``max_j sum_m phi_jm lambda_m``
    once attached to a mark space.
    """

    def __init__(self, edges, values):
        self.edges = np.asarray(edges, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim != 2 or self.edges.shape != (self.values.shape[0] + 1,):
            raise ConfigurationError("need J+1 edges for J rows of intensity values")
        if np.any(self.values < 0):
            raise DomainError("intensity must be nonnegative")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("intensity must be bounded")

    def __call__(self, t):
        j = np.searchsorted(self.edges, np.asarray(t, dtype=float), side="right") - 1
        j = np.clip(j, 0, self.values.shape[0] - 1)
        return self.values[j]

    def total_rate_bound(self, marks):
        return float(np.max(self.values @ marks.weights))


def sample_jump_times(T, marks, rate_scale=1.0, intensity_fn=None, rng=None, intensity_bound=None):
    """Poisson random measure on ``[0, T] x Z`` by thinning.

    The instantaneous rate of mark ``m`` is ``rate_scale * phi(t, z_m) * lambda_m``
    (``phi = 1`` when ``intensity_fn`` is ``None``).  ``intensity_fn`` maps an
    array of times to an array of shape ``(len(t), M)``; a finite bound on
    ``sum_m phi(t, z_m) lambda_m`` must be supplied through ``intensity_bound``
    unless the callable exposes ``total_rate_bound``.
    """
    if not rate_scale > 0:
        raise DomainError("rate_scale must be positive")
    if not T >= 0:
        raise DomainError("T must be nonnegative")
    rng = rng if rng is not None else stream(0, 0)
    lam = marks.weights
    if intensity_fn is None:
        bound = marks.total_mass
    elif hasattr(intensity_fn, "total_rate_bound"):
        bound = intensity_fn.total_rate_bound(marks)
    elif intensity_bound is None or not np.isfinite(intensity_bound):
        raise DomainError("an intensity function needs a finite bound")
    else:
        bound = float(intensity_bound)
    if bound < 0:
        raise DomainError("intensity must be nonnegative")
    dominating = rate_scale * bound
    if dominating == 0.0 or T == 0:
        return JumpLog(np.empty(0), np.empty(0, int))
    n = rng.poisson(dominating * T)
    times = np.sort(rng.uniform(0.0, T, size=n))
    accept_u = rng.uniform(size=n)
    mark_u = rng.uniform(size=n)
    if intensity_fn is None:
        weights = np.broadcast_to(lam, (n, lam.shape[0]))
    else:
        phi = np.asarray(intensity_fn(times), dtype=float).reshape(n, lam.shape[0])
        if np.any(phi < 0):
            raise DomainError("intensity must be nonnegative")
        weights = phi * lam
    total = weights.sum(axis=1)
    if np.any(total > bound * (1 + 1e-12)):
        raise DomainError("intensity exceeds its declared bound")
    keep = accept_u * bound < total
    cum = np.cumsum(weights[keep], axis=1)
    pick = mark_u[keep][:, None] * total[keep][:, None]
    mark_idx = np.minimum((pick >= cum).sum(axis=1), lam.shape[0] - 1)
    return JumpLog(times[keep], mark_idx)
