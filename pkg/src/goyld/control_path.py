"""Controls ``theta = (psi, phi)``, their entropy/quadratic costs and drift weights."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError


def ell(r):
    """``r log r - r + 1`` with ``ell(0) = 1``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(np.isnan(r)):
        raise DomainError("ell is defined for r >= 0 only")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r > 0, r * np.log(np.where(r > 0, r, 1.0)) - r + 1.0, 1.0)
    return out if out.ndim else float(out)


def ell_prime(r):
    return np.log(np.asarray(r, dtype=float))


def _ell_weight(r):
    return ell(r)


def _standard_weight(r):
    return np.asarray(r, dtype=float) - 1.0


# jump-drift weight w(phi) multiplying g(u, z) lambda(dz) in the controlled drift
DRIFT_WEIGHTS = {"paper_literal": _ell_weight, "standard": _standard_weight}


def drift_weight(name):
    try:
        return DRIFT_WEIGHTS[name]
    except KeyError:
        raise ConfigurationError(
            f"jump_drift_weight must be one of {sorted(DRIFT_WEIGHTS)}, got {name!r}"
        ) from None


@dataclass
class ControlPath:
    """Piecewise-constant control on ``[edges[j], edges[j+1])``, ``j < J``.

    ``psi`` has shape ``(J, N)`` (complex), ``phi`` shape ``(J, M)``.  Marks
    flagged in ``phi_off`` carry ``phi = 0`` regardless of the stored value.
    """

    edges: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    phi_off: np.ndarray = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.psi = np.atleast_2d(np.asarray(self.psi, dtype=complex))
        self.phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        J = self.edges.shape[0] - 1
        if J < 1 or self.edges[0] != 0.0 or np.any(np.diff(self.edges) <= 0):
            raise ConfigurationError("time_grid must start at 0 and increase strictly")
        if self.psi.shape[0] != J or self.phi.shape[0] != J:
            raise ConfigurationError("psi and phi need one row per control interval")
        if not np.all(np.isfinite(self.psi)):
            raise DomainError("psi must be finite")
        if np.any(np.isnan(self.phi)) or np.any(self.phi < 0):
            raise DomainError("phi must be nonnegative")
        if not np.all(np.isfinite(self.phi)):
            raise DomainError("phi must be bounded")
        M = self.phi.shape[1]
        self.phi_off = np.zeros(M, bool) if self.phi_off is None else np.asarray(self.phi_off, bool)
        if self.phi_off.shape != (M,):
            raise ConfigurationError("phi_off needs one flag per mark")

    @classmethod
    def null(cls, T, n_nodes, n_shells, n_marks):
        """``theta = (0, 1)``: zero Gaussian shift, unit jump intensity."""
        return cls(
            np.linspace(0.0, T, n_nodes + 1),
            np.zeros((n_nodes, n_shells), complex),
            np.ones((n_nodes, n_marks)),
        )

    @property
    def T(self):
        return float(self.edges[-1])

    @property
    def n_nodes(self):
        return self.edges.shape[0] - 1

    @property
    def dt_nodes(self):
        return np.diff(self.edges)

    @property
    def phi_effective(self):
        return np.where(self.phi_off, 0.0, self.phi)

    def index_at(self, t):
        j = np.searchsorted(self.edges, np.asarray(t, dtype=float), side="right") - 1
        return np.clip(j, 0, self.n_nodes - 1)

    def on_steps(self, dt, n_steps):
        """Values held on each integrator step, looked up at step midpoints."""
        mid = (np.arange(n_steps) + 0.5) * dt
        j = self.index_at(mid)
        return self.psi[j], self.phi_effective[j]

    def copy(self):
        return ControlPath(self.edges.copy(), self.psi.copy(), self.phi.copy(), self.phi_off.copy())

    def to_dict(self):
        return {
            "time_grid": [float(x) for x in self.edges],
            "psi": [[[float(z.real), float(z.imag)] for z in row] for row in self.psi],
            "phi": [[float(x) for x in row] for row in self.phi],
            "phi_off": [bool(x) for x in self.phi_off],
        }

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"time_grid", "psi", "phi", "phi_off"}
        if unknown:
            raise ConfigurationError(f"unknown control keys: {sorted(unknown)}")
        try:
            psi = np.asarray(d["psi"], dtype=float)
            phi = np.asarray(d["phi"], dtype=float)
            edges = d["time_grid"]
        except KeyError as exc:
            raise ConfigurationError(f"control is missing key {exc.args[0]!r}") from None
        if psi.ndim != 3 or psi.shape[-1] != 2:
            raise ConfigurationError("psi must be nodes x shells x [re, im]")
        if np.any(phi < 0):
            raise DomainError("phi must be nonnegative")
        return cls(edges, psi[..., 0] + 1j * psi[..., 1], phi, d.get("phi_off"))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class CostBreakdown:
    jump_cost: float
    gaussian_cost: float

    @property
    def total(self):
        return self.jump_cost + self.gaussian_cost

    def to_dict(self):
        return {"jump_cost": self.jump_cost, "gaussian_cost": self.gaussian_cost, "total": self.total}


def cost(control, marks, q):
    """Exact quadrature of both costs for a piecewise-constant control.

    ``jump_cost = sum_j sum_m ell(phi_jm) lambda_m dt_j`` and
    ``gaussian_cost = 1/2 sum_j ||psi_j||_0^2 dt_j``.
    """
    if control.phi.shape[1] != marks.size:
        raise ConfigurationError("control has the wrong number of marks")
    if control.psi.shape[1] != q.q.shape[0]:
        raise ConfigurationError("control has the wrong number of shells")
    dtj = control.dt_nodes
    jump = float(np.sum(dtj * (ell(control.phi_effective) @ marks.weights)))
    gauss = float(0.5 * np.sum(dtj * q.cm_norm_sq(control.psi)))
    return CostBreakdown(jump, gauss)
