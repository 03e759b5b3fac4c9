"""Run configuration: strict JSON ingestion, defaults and object construction.

Complex numbers are written as ``[re, im]`` pairs (a bare real is accepted).
Every block is checked for unknown keys before anything else happens, and the
resolved configuration, with all defaults filled in, is what gets hashed.
"""

import copy
import json
import os
from dataclasses import dataclass

import numpy as np

from .control_path import DRIFT_WEIGHTS, ControlPath
from .errors import ConfigurationError
from .noise import FAMILY_KINDS, CoefficientFamily, CovarianceQ, MarkSpace
from .sde import JUMP_SCALINGS, SCHEMES, IntegratorConfig
from .shell_core import CANONICAL_GOY_COEFFS, ModelParams, ShellGrid

EXPERIMENTS = ("simulate", "skeleton", "rate", "verify")
SUITES = ("operators", "noise", "energy", "monotonicity", "weak-convergence", "ldp")

# keys that cannot change any number in the output
NON_COMPUTATIONAL = ("output_dir", "threads")

# block name -> {key: default}; ``REQUIRED`` marks keys without a default
REQUIRED = object()

SCHEMA = {
    "": {
        "experiment": "simulate",
        "seed": 0,
        "output_dir": "out",
        "jump_drift_weight": "paper_literal",
        "threads": 1,
        "model": {},
        "noise": {},
        "integrator": {},
        "control": None,
        "rate": {},
        "verify": {},
    },
    "model": {
        "nu": REQUIRED,
        "k0": 1.0,
        "n_shells": REQUIRED,
        "u0": None,
        "forcing": None,
        "forcing_times": None,
        "goy_coeffs": list(CANONICAL_GOY_COEFFS),
        "canonical_B": True,
        "nonlinear": True,
    },
    "noise": {
        "q": None,
        "marks": {},
        "family": {},
        "epsilon": 0.0,
    },
    "marks": {"labels": ["z1"], "weights": [1.0]},
    "family": {"kind": "additive", "sigma_scale": None, "jump_amplitudes": None},
    "integrator": {
        "dt": 1e-3,
        "T": 1.0,
        "scheme": "semi_implicit_em",
        "record_stride": 1,
        "jump_scaling": "ldp",
    },
    "rate": {
        "target_kind": "terminal_energy_above",
        "target": None,
        "match_tolerance": 1e-4,
        "budget": 1e3,
        "n_nodes": 4,
        "dt": None,
        "max_iter": 200,
        "restarts": 2,
        "phi_min": 1e-6,
        "phi_max": 50.0,
        "marks_off": [],
    },
    "verify": {
        "suite": "operators",
        "samples": 1000,
        "n_paths": 1000,
        "r": 1.0,
        "epsilons": [0.1, 0.01, 0.001],
        "threshold": None,
        "p_list": [2, 4],
    },
}

DEFAULT_CONFIG = {
    "model": {
        "nu": 0.05,
        "n_shells": 8,
        "u0": [[0.8, 0.0], [0.0, 0.4], [0.2, 0.0], 0, 0, 0, 0, 0],
        "forcing": [[0.5, 0.0], 0, 0, 0, 0, 0, 0, 0],
    },
    "noise": {
        "q": [1.0, 0.5, 0, 0, 0, 0, 0, 0],
        "marks": {"labels": ["a", "b"], "weights": [1.0, 0.5]},
        "family": {
            "kind": "additive",
            "sigma_scale": [0.5, 0.5, 0, 0, 0, 0, 0, 0],
            "jump_amplitudes": [[0.5, 0, 0, 0, 0, 0, 0, 0], [0, [0, 0.5], 0, 0, 0, 0, 0, 0]],
        },
        "epsilon": 0.1,
    },
    "integrator": {"dt": 1e-3, "T": 1.0},
}


def _complex_array(x, name):
    def conv(v):
        if isinstance(v, (list, tuple)) and len(v) == 2 and all(
            isinstance(c, (int, float)) and not isinstance(c, bool) for c in v
        ):
            return complex(v[0], v[1])
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return complex(v)
        raise TypeError

    def walk(v):
        try:
            return conv(v)
        except TypeError:
            if isinstance(v, list):
                return [walk(e) for e in v]
            raise ConfigurationError(f"{name}: expected numbers or [re, im] pairs") from None

    return np.array(walk(x), dtype=complex)


def encode_complex(a):
    a = np.asarray(a, dtype=complex)
    if a.ndim == 0:
        return [float(a.real), float(a.imag)]
    return [encode_complex(x) for x in a]


def _resolve(block, data, where):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where or 'config'} must be a JSON object")
    spec = SCHEMA[block]
    unknown = sorted(set(data) - set(spec))
    if unknown:
        raise ConfigurationError(f"unknown key {where + '.' if where else ''}{unknown[0]!r}")
    out = {}
    for key, default in spec.items():
        if key in data:
            out[key] = copy.deepcopy(data[key])
        elif default is REQUIRED:
            raise ConfigurationError(f"missing required key {where + '.' if where else ''}{key!r}")
        else:
            out[key] = copy.deepcopy(default)
    return out


def _number(d, key, where, lo=None, strict_lo=False, integer=False, allow_none=False):
    v = d[key]
    if v is None and allow_none:
        return
    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    if integer:
        ok = ok and float(v) == int(v)
    if not ok or not np.isfinite(v):
        raise ConfigurationError(f"{where}.{key} must be a finite {'integer' if integer else 'number'}")
    if lo is not None and (v <= lo if strict_lo else v < lo):
        raise ConfigurationError(f"{where}.{key} must be {'>' if strict_lo else '>='} {lo}")


def _choice(d, key, options, where):
    if d[key] not in options:
        raise ConfigurationError(f"{where}.{key} must be one of {list(options)}, got {d[key]!r}")


@dataclass
class RunConfig:
    """A validated, fully resolved configuration (``data`` is plain JSON)."""

    data: dict

    def __eq__(self, other):
        return isinstance(other, RunConfig) and canonical_json(self.data) == canonical_json(other.data)

    def __getitem__(self, key):
        return self.data[key]

    def to_json(self):
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def computational(self):
        """The configuration minus where results go and how many workers run."""
        return {k: v for k, v in self.data.items() if k not in NON_COMPUTATIONAL}

    @property
    def digest(self):
        import hashlib

        return hashlib.sha256(canonical_json(self.computational()).encode()).hexdigest()

    # object construction -------------------------------------------------

    def grid(self):
        m = self.data["model"]
        return ShellGrid(float(m["k0"]), int(m["n_shells"]))

    def params(self):
        m = self.data["model"]
        grid = self.grid()
        u0 = None if m["u0"] is None else _complex_array(m["u0"], "model.u0")
        f = None if m["forcing"] is None else _complex_array(m["forcing"], "model.forcing")
        return ModelParams(
            nu=float(m["nu"]), grid=grid, u0=u0, forcing=f,
            forcing_times=m["forcing_times"], goy_coeffs=tuple(m["goy_coeffs"]),
            canonical_B=bool(m["canonical_B"]), nonlinear=bool(m["nonlinear"]),
        )

    def noise(self):
        n = self.data["noise"]
        N = int(self.data["model"]["n_shells"])
        q = CovarianceQ(np.ones(N) if n["q"] is None else n["q"])
        marks = MarkSpace(n["marks"]["labels"], n["marks"]["weights"])
        fd = n["family"]
        s = np.zeros(N) if fd["sigma_scale"] is None else np.asarray(fd["sigma_scale"], float)
        c = (np.zeros((marks.size, N), complex) if fd["jump_amplitudes"] is None
             else _complex_array(fd["jump_amplitudes"], "noise.family.jump_amplitudes"))
        fam = CoefficientFamily(fd["kind"], s, c, q, marks)
        return q, marks, fam

    def integrator(self):
        i = self.data["integrator"]
        return IntegratorConfig(dt=float(i["dt"]), T=float(i["T"]),
                                epsilon=float(self.data["noise"]["epsilon"]), scheme=i["scheme"],
                                record_stride=int(i["record_stride"]), jump_scaling=i["jump_scaling"])

    def control(self):
        c = self.data["control"]
        return None if c is None else ControlPath.from_dict(c)


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def validate(raw, base_dir="."):
    """Resolve defaults and check every field; returns a :class:`RunConfig`."""
    top = _resolve("", raw, "")
    _choice(top, "experiment", EXPERIMENTS, "config")
    _choice(top, "jump_drift_weight", tuple(DRIFT_WEIGHTS), "config")
    _number(top, "seed", "config", lo=0, integer=True)
    if top["seed"] >= 2 ** 64:
        raise ConfigurationError("config.seed must fit in 64 bits")
    _number(top, "threads", "config", lo=1, integer=True)
    if not isinstance(top["output_dir"], str) or not top["output_dir"]:
        raise ConfigurationError("config.output_dir must be a nonempty string")

    m = top["model"] = _resolve("model", top["model"], "model")
    _number(m, "nu", "model", lo=0, strict_lo=True)
    _number(m, "k0", "model", lo=0, strict_lo=True)
    _number(m, "n_shells", "model", lo=3, integer=True)
    n = top["noise"] = _resolve("noise", top["noise"], "noise")
    n["marks"] = _resolve("marks", n["marks"], "noise.marks")
    n["family"] = _resolve("family", n["family"], "noise.family")
    _choice(n["family"], "kind", FAMILY_KINDS, "noise.family")
    _number(n, "epsilon", "noise", lo=0)
    N = int(m["n_shells"])
    if n["q"] is None:
        n["q"] = [1.0] * N
    if n["family"]["sigma_scale"] is None:
        n["family"]["sigma_scale"] = [0.0] * N
    if n["family"]["jump_amplitudes"] is None:
        n["family"]["jump_amplitudes"] = [[0.0] * N for _ in n["marks"]["labels"]]
    if m["u0"] is None:
        m["u0"] = [0.0] * N
    if m["forcing"] is None:
        m["forcing"] = [0.0] * N
    i = top["integrator"] = _resolve("integrator", top["integrator"], "integrator")
    _number(i, "dt", "integrator", lo=0, strict_lo=True)
    _number(i, "T", "integrator", lo=0, strict_lo=True)
    _number(i, "record_stride", "integrator", lo=1, integer=True)
    _choice(i, "scheme", SCHEMES, "integrator")
    _choice(i, "jump_scaling", JUMP_SCALINGS, "integrator")
    r = top["rate"] = _resolve("rate", top["rate"], "rate")
    _choice(r, "target_kind", ("terminal_state", "terminal_energy_above"), "rate")
    _number(r, "match_tolerance", "rate", lo=0, strict_lo=True)
    _number(r, "budget", "rate", lo=0)
    _number(r, "n_nodes", "rate", lo=1, integer=True)
    _number(r, "max_iter", "rate", lo=1, integer=True)
    _number(r, "restarts", "rate", lo=1, integer=True)
    _number(r, "dt", "rate", lo=0, strict_lo=True, allow_none=True)
    if r["dt"] is None:
        r["dt"] = i["dt"]
    v = top["verify"] = _resolve("verify", top["verify"], "verify")
    _choice(v, "suite", SUITES, "verify")
    _number(v, "samples", "verify", lo=1, integer=True)
    _number(v, "n_paths", "verify", lo=1, integer=True)
    _number(v, "r", "verify", lo=0, strict_lo=True)
    _number(v, "threshold", "verify", lo=0, strict_lo=True, allow_none=True)

    c = top["control"]
    if isinstance(c, str):
        path = c if os.path.isabs(c) else os.path.join(base_dir, c)
        try:
            with open(path) as fh:
                c = json.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read control file {c!r}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(
                f"control file {c!r}: {exc.msg} at line {exc.lineno}, column {exc.colno}") from None
    if c is not None:
        ctrl = ControlPath.from_dict(c)
        top["control"] = ctrl.to_dict()

    cfg = RunConfig(top)
    # building the objects runs every constructor-level precondition
    params = cfg.params()
    q, marks, fam = cfg.noise()
    integ = cfg.integrator()
    if q.q.shape[0] != N:
        raise ConfigurationError("noise.q must have one entry per shell")
    ctrl = cfg.control()
    if ctrl is not None:
        if ctrl.psi.shape[1] != N or ctrl.phi.shape[1] != marks.size:
            raise ConfigurationError("control does not match the shell count / mark space")
        if abs(ctrl.T - integ.T) > 1e-12 * integ.T:
            raise ConfigurationError("control time_grid must end at integrator.T")
    if r["target"] is not None:
        if r["target_kind"] == "terminal_energy_above":
            _number(r, "target", "rate", lo=0, strict_lo=True)
        else:
            t = _complex_array(r["target"], "rate.target")
            if t.shape != (N,):
                raise ConfigurationError("rate.target must be a state with one entry per shell")
    elif top["experiment"] == "rate":
        raise ConfigurationError("rate.target is required for the rate experiment")
    eps = v["epsilons"]
    if (not isinstance(eps, list) or not eps
            or not all(isinstance(e, (int, float)) and not isinstance(e, bool) and e > 0 for e in eps)
            or any(b >= a for a, b in zip(eps, eps[1:]))):
        raise ConfigurationError("verify.epsilons must be a strictly decreasing list of positive numbers")
    if not isinstance(v["p_list"], list) or not all(isinstance(x, int) and x >= 2 for x in v["p_list"]):
        raise ConfigurationError("verify.p_list must list integers >= 2")
    for z in r["marks_off"]:
        marks.index(z)
    del params
    return cfg


def loads_config(text, base_dir="."):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON: {exc.msg} at line {exc.lineno}, column {exc.colno}") from None
    return validate(raw, base_dir)


def load_config(path):
    """Read, parse and validate a JSON run configuration."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path!r}: {exc.strerror}") from None
    return loads_config(text, os.path.dirname(os.path.abspath(path)))


def default_config():
    return validate(copy.deepcopy(DEFAULT_CONFIG))


def with_overrides(cfg, **overrides):
    """Copy of ``cfg`` with dotted-key overrides (``"noise.epsilon": 0``) re-validated."""
    data = copy.deepcopy(cfg.data)
    for key, value in overrides.items():
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node[p]
        node[parts[-1]] = value
    return validate(data)
