"""Phase space, norms and operators of the truncated GOY shell model.

States are plain complex ``numpy`` arrays whose last axis runs over the
shells ``n = 1..N``; any leading axes are treated as a batch.  Modes outside
``1..N`` are zero (two padding modes on each side).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError

# (a, b, c) that make the GOY nonlinearity coincide with B(u, u)
CANONICAL_GOY_COEFFS = (-1.0, 0.5, 0.5)


@dataclass(frozen=True)
class ShellGrid:
    """Dyadic wavenumbers ``k_n = k0 * 2**n`` for ``n = 1..n_shells``."""

    k0: float = 1.0
    n_shells: int = 16

    def __post_init__(self):
        if not (self.k0 > 0 and np.isfinite(self.k0)):
            raise ConfigurationError("k0 must be positive and finite")
        if int(self.n_shells) != self.n_shells or self.n_shells < 3:
            raise ConfigurationError("n_shells must be an integer >= 3")

    @property
    def k(self):
        return self.k0 * 2.0 ** np.arange(1, self.n_shells + 1)

    @property
    def k_squared(self):
        return self.k ** 2


def as_state(u, grid):
    """Coerce ``u`` to a complex array on ``grid`` and check it is finite."""
    u = np.asarray(u, dtype=complex)
    if u.shape[-1:] != (grid.n_shells,):
        raise ConfigurationError(
            f"state has {u.shape[-1] if u.ndim else 0} shells, grid has {grid.n_shells}"
        )
    if not np.all(np.isfinite(u)):
        raise DomainError("state contains non-finite entries")
    return u


def basis(n, grid):
    """Unit vector ``e_n`` (1-based shell index)."""
    e = np.zeros(grid.n_shells, dtype=complex)
    e[n - 1] = 1.0
    return e


@dataclass
class ModelParams:
    """Viscosity, grid, nonlinearity selection, forcing and initial state.

    ``forcing`` is either a single shell vector (constant in time) or an array
    of shape ``(J, N)`` holding the value on ``[forcing_times[j], forcing_times[j+1])``.
    """

    nu: float
    grid: ShellGrid
    u0: np.ndarray = None
    forcing: np.ndarray = None
    forcing_times: np.ndarray = None
    goy_coeffs: tuple = CANONICAL_GOY_COEFFS
    canonical_B: bool = True
    nonlinear: bool = True

    def __post_init__(self):
        if not (self.nu > 0 and np.isfinite(self.nu)):
            raise ConfigurationError("nu must be positive")
        N = self.grid.n_shells
        a, b, c = (float(x) for x in self.goy_coeffs)
        if abs(a + b + c) > 1e-12 * max(1.0, abs(a), abs(b), abs(c)):
            raise ConfigurationError("goy_coeffs must satisfy a + b + c = 0")
        self.goy_coeffs = (a, b, c)
        self.u0 = np.zeros(N, complex) if self.u0 is None else as_state(self.u0, self.grid)
        if self.forcing is None:
            self.forcing = np.zeros(N, complex)
        f = np.asarray(self.forcing, dtype=complex)
        if f.shape[-1] != N or f.ndim > 2:
            raise ConfigurationError("forcing must have shape (N,) or (J, N)")
        if f.ndim == 2:
            times = np.asarray(self.forcing_times, dtype=float)
            if times.shape != (f.shape[0],) or times[0] != 0.0 or np.any(np.diff(times) <= 0):
                raise ConfigurationError(
                    "forcing_times must start at 0, increase strictly and match forcing rows"
                )
            self.forcing_times = times
        self.forcing = f

    def forcing_at(self, t):
        if self.forcing.ndim == 1:
            return self.forcing
        j = np.searchsorted(self.forcing_times, t, side="right") - 1
        return self.forcing[max(j, 0)]

    def forcing_dual_integral(self, t):
        """``int_0^t ||f(s)||_{V'}^2 ds`` for the piecewise-constant forcing."""
        if self.forcing.ndim == 1:
            return t * v_dual_norm(self.forcing, self.grid) ** 2
        edges = np.append(self.forcing_times, np.inf)
        total = 0.0
        for j, f in enumerate(self.forcing):
            lo, hi = edges[j], min(edges[j + 1], t)
            if hi > lo:
                total += (hi - lo) * v_dual_norm(f, self.grid) ** 2
        return total


def apply_A(u, grid):
    """``(A u)_n = k_n^2 u_n``."""
    return grid.k_squared * as_state(u, grid)


def _padded_conj(u):
    pad = [(0, 0)] * (u.ndim - 1) + [(2, 2)]
    return np.pad(np.conj(u), pad)


def apply_B(u, v, grid):
    """Canonical bilinear term with weights 1/4, 1/2, 1/2, 1/8.

    ``B_n(u, v) = i k_n (1/4 u*_{n+1} v*_{n-1}
    - 1/2 (u*_{n+1} v*_{n+2} + u*_{n+2} v*_{n+1}) + 1/8 u*_{n-1} v*_{n-2})``
    """
    u = as_state(u, grid)
    v = as_state(v, grid)
    N = grid.n_shells
    U = _padded_conj(u)
    V = _padded_conj(v)
    # padded index of shell n is n + 1
    up1, up2, um1 = U[..., 3:N + 3], U[..., 4:N + 4], U[..., 1:N + 1]
    vm1, vp2, vp1, vm2 = V[..., 1:N + 1], V[..., 4:N + 4], V[..., 3:N + 3], V[..., 0:N]
    s = 0.25 * up1 * vm1 - 0.5 * (up1 * vp2 + up2 * vp1) + 0.125 * um1 * vm2
    return 1j * grid.k * s


def apply_B_goy(u, grid, coeffs=CANONICAL_GOY_COEFFS):
    """Quadratic GOY term ``i(a k_n u*_{n+1}u*_{n+2} + b k_{n-1} u*_{n-1}u*_{n+1}
    + c k_{n-2} u*_{n-1}u*_{n-2})`` evaluated on the diagonal ``u = v``."""
    a, b, c = coeffs
    u = as_state(u, grid)
    N = grid.n_shells
    U = _padded_conj(u)
    up1, up2 = U[..., 3:N + 3], U[..., 4:N + 4]
    um1, um2 = U[..., 1:N + 1], U[..., 0:N]
    k = grid.k
    return 1j * (a * k * up1 * up2 + b * (k / 2) * um1 * up1 + c * (k / 4) * um1 * um2)


def nonlinear_term(u, params):
    """The quadratic term selected by ``params`` (zero when disabled)."""
    if not params.nonlinear:
        return np.zeros_like(np.asarray(u, dtype=complex))
    if params.canonical_B:
        return apply_B(u, u, params.grid)
    return apply_B_goy(u, params.grid, params.goy_coeffs)


def nonlinear_kernel(params):
    """Unchecked ``u -> B(u, u)`` for batches of shape ``(P, N)``, for inner loops."""
    N = params.grid.n_shells
    k = params.grid.k
    if not params.nonlinear:
        return lambda u: np.zeros_like(u)
    a, b, c = params.goy_coeffs
    canonical = params.canonical_B

    def kern(u):
        U = np.zeros(u.shape[:-1] + (N + 4,), complex)
        U[..., 2:N + 2] = np.conj(u)
        up1, up2, um1, um2 = U[..., 3:N + 3], U[..., 4:N + 4], U[..., 1:N + 1], U[..., 0:N]
        if canonical:
            s = 0.25 * up1 * um1 - up1 * up2 + 0.125 * um1 * um2
            return 1j * k * s
        return 1j * (a * k * up1 * up2 + b * (k / 2) * um1 * up1 + c * (k / 4) * um1 * um2)

    return kern


def apply_F(u, params):
    """``F(u) = -nu A u - B(u, u)``."""
    return -params.nu * apply_A(u, params.grid) - nonlinear_term(u, params)


def inner(u, v):
    """Real scalar product ``Re sum u_n conj(v_n)`` over the last axis."""
    return np.sum(np.real(u * np.conj(v)), axis=-1)


def h_norm(u):
    return np.sqrt(np.sum(np.abs(u) ** 2, axis=-1))


def v_norm(u, grid):
    return np.sqrt(np.sum(grid.k_squared * np.abs(u) ** 2, axis=-1))


def v_dual_norm(u, grid):
    return np.sqrt(np.sum(np.abs(u) ** 2 / grid.k_squared, axis=-1))


def da_norm(u, grid):
    """``|A u|``."""
    return np.sqrt(np.sum(grid.k_squared ** 2 * np.abs(u) ** 2, axis=-1))


def l4_norm(u):
    return np.sum(np.abs(u) ** 4, axis=-1) ** 0.25


def ws_p_norm(u, grid, s, p):
    """``||A^{s/2} u||_p``; ``p = inf`` gives the sup over shells."""
    if not (p >= 1):
        raise DomainError("p must be >= 1 (or inf)")
    w = grid.k ** s * np.abs(u)
    if np.isinf(p):
        return np.max(w, axis=-1)
    return np.sum(w ** p, axis=-1) ** (1.0 / p)


def norms(u, grid):
    """All norms used by the energy and monotonicity estimates.

    Returns a dict with ``h_norm``, ``v_norm``, ``l4_norm`` and a callable
    ``ws_p_norm(s, p)``.
    """
    u = as_state(u, grid)
    return {
        "h_norm": h_norm(u),
        "v_norm": v_norm(u, grid),
        "l4_norm": l4_norm(u),
        "ws_p_norm": lambda s, p: ws_p_norm(u, grid, s, p),
    }


def random_states(rng, grid, size):
    """Standard complex Gaussian states (``E|u_n|^2 = 1``), shape ``(size, N)``."""
    z = rng.standard_normal((size, grid.n_shells, 2)) / np.sqrt(2.0)
    return z[..., 0] + 1j * z[..., 1]


@dataclass
class OperatorBoundReport:
    c1: float
    c2: float
    c3: float
    c4: float
    samples: int
    seed: int
    ratios: dict = field(default_factory=dict, repr=False)


def bound_ratios(u, v, grid):
    """Per-sample ratios whose suprema are the constants C1..C4."""
    b = apply_B(u, v, grid)
    hb = h_norm(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = {
            "c1": hb / (v_norm(u, grid) * h_norm(v)),
            "c2": hb / (h_norm(u) * v_norm(v, grid)),
            "c3": v_dual_norm(b, grid) / (h_norm(u) * h_norm(v)),
            "c4": v_norm(b, grid) / (h_norm(u) * da_norm(v, grid)),
        }
    return {name: np.nan_to_num(x, nan=0.0) for name, x in r.items()}


_BOUND_WEIGHTS = {
    # name: (input weight on u, input weight on v, output weight), as powers of k
    "c1": (-1, 0, 0),
    "c2": (0, -1, 0),
    "c3": (0, 0, -1),
    "c4": (0, -2, 1),
}


def _as_real_matrix(outputs):
    """Stack complex outputs for inputs (e_1, i e_1, ...) into real matrices."""
    # outputs: (S, 2N inputs, N) -> (S, 2N, 2N) acting on [re; im]
    m = np.concatenate([outputs.real, outputs.imag], axis=-1)
    return np.swapaxes(m, -1, -2)


def _unit_inputs(N):
    eye = np.eye(N, dtype=complex)
    return np.concatenate([eye, 1j * eye])


def _from_real(x, N):
    return x[..., :N] + 1j * x[..., N:]


def _refine_pairs(u, v, grid, name, iters):
    """Alternating top-singular-vector ascent on one bilinear-bound ratio.

    Each sweep maximises the ratio exactly over one argument with the other
    fixed, so the ratio never decreases.
    """
    pu, pv, po = _BOUND_WEIGHTS[name]
    k = grid.k
    N = grid.n_shells
    du, dv, wo = k ** pu, k ** pv, k ** po
    ut = u / du
    vt = v / dv
    ut /= h_norm(ut)[:, None]
    vt /= h_norm(vt)[:, None]
    basis_in = _unit_inputs(N)
    sigma = None
    for _ in range(iters):
        out = wo * apply_B(du * basis_in[None], (dv * vt)[:, None, :], grid)
        _, s, vh = np.linalg.svd(_as_real_matrix(out))
        ut = _from_real(vh[:, 0, :], N)
        out = wo * apply_B((du * ut)[:, None, :], dv * basis_in[None], grid)
        _, s, vh = np.linalg.svd(_as_real_matrix(out))
        vt = _from_real(vh[:, 0, :], N)
        sigma = s[:, 0]
    return du * ut, dv * vt, sigma


def measure_operator_bounds(grid, samples, seed, refine=4):
    """Empirical maxima of the four bilinear-bound ratios.

    Starts from ``samples`` random complex Gaussian pairs.  With ``refine > 0``
    every pair is pushed uphill by ``refine`` sweeps of alternating
    maximisation before the ratio is recorded; the raw ratios are heavy tailed
    and their sample maximum does not settle otherwise.  Pair ``i`` depends
    only on ``(seed, i)``, so doubling ``samples`` extends the sample set.
    """
    if samples < 1:
        raise DomainError("samples must be >= 1")
    from .rng import stream

    pairs = np.stack([random_states(stream(seed, i), grid, 2) for i in range(samples)])
    u, v = pairs[:, 0], pairs[:, 1]
    ratios = {}
    for name in _BOUND_WEIGHTS:
        if refine > 0:
            uu, vv, _ = _refine_pairs(u, v, grid, name, refine)
        else:
            uu, vv = u, v
        ratios[name] = bound_ratios(uu, vv, grid)[name]
    return OperatorBoundReport(
        c1=float(ratios["c1"].max()),
        c2=float(ratios["c2"].max()),
        c3=float(ratios["c3"].max()),
        c4=float(ratios["c4"].max()),
        samples=samples,
        seed=seed,
        ratios=ratios,
    )
