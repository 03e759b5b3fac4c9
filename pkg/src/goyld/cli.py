"""Command line interface: ``goyld {simulate,skeleton,rate,verify,report}``.

Exit codes: 0 success, 2 validation error, 3 numerical blow-up,
4 verification verdict failure.
"""

import argparse
import csv
import glob
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .config import SUITES, default_config, load_config, validate
from .control import RateQuery, minimize_rate, solve_skeleton
from .control_path import DRIFT_WEIGHTS, ControlPath, cost
from .errors import BlowUpError, ConfigurationError, DomainError, PreconditionError
from .sde import simulate, simulate_controlled

EXIT_OK, EXIT_VALIDATION, EXIT_BLOWUP, EXIT_VERDICT = 0, 2, 3, 4

log = logging.getLogger("goyld")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _finite(x):
    x = float(x)
    return x if np.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")


def write_manifest(out_dir, cfg, files, wall_time, exit_code):
    manifest = {
        "config_digest": cfg.digest,
        "tool_version": __version__,
        "experiment": cfg["experiment"],
        "jump_drift_weight": cfg["jump_drift_weight"],
        "seed": cfg["seed"],
        "wall_time": wall_time,
        "exit_code": exit_code,
        "files": [{"path": os.path.basename(f), "sha256": _sha256(f)} for f in sorted(files)],
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def _base_result(cfg):
    return {
        "experiment": cfg["experiment"],
        "config_digest": cfg.digest,
        "seed": cfg["seed"],
        "jump_drift_weight": cfg["jump_drift_weight"],
    }


def _run_simulate(cfg, out, workers):
    params = cfg.params()
    q, marks, fam = cfg.noise()
    icfg = cfg.integrator()
    ctrl = cfg.control()
    files, code = [], EXIT_OK
    try:
        if ctrl is None:
            traj = simulate(params, fam, marks, q, icfg, int(cfg["seed"]))
        else:
            traj = simulate_controlled(params, fam, marks, q, icfg, ctrl, int(cfg["seed"]),
                                       cfg["jump_drift_weight"])
    except BlowUpError as exc:
        traj, code = exc.partial, EXIT_BLOWUP
    tp, jp = os.path.join(out, "trajectory.csv"), os.path.join(out, "jumps.csv")
    traj.to_csv(tp)
    traj.jumps.to_csv(jp, marks)
    res = _base_result(cfg)
    res.update({
        "epsilon": icfg.epsilon,
        "controlled": ctrl is not None,
        "n_jumps": len(traj.jumps),
        "terminal_energy": float(traj.energy[-1]),
        "dissipation_integral": float(traj.dissipation_integral[-1]),
        "blowup_step": traj.blowup_step,
    })
    rp = os.path.join(out, "result.json")
    _write_json(rp, res)
    return files + [tp, jp, rp], code


def _run_skeleton(cfg, out, workers):
    params = cfg.params()
    q, marks, fam = cfg.noise()
    T = cfg["integrator"]["T"]
    ctrl = cfg.control() or ControlPath.null(T, 1, params.grid.n_shells, marks.size)
    code = EXIT_OK
    try:
        traj = solve_skeleton(params, fam, marks, q, ctrl, cfg["integrator"]["dt"], cfg["jump_drift_weight"])
    except BlowUpError as exc:
        traj, code = exc.partial, EXIT_BLOWUP
    sp = os.path.join(out, "skeleton.csv")
    traj.to_csv(sp)
    res = _base_result(cfg)
    res.update({"cost": cost(ctrl, marks, q).to_dict(),
                "terminal_energy": float(traj.energy[-1]),
                "terminal_state": [[float(z.real), float(z.imag)] for z in traj.states[-1]]})
    rp = os.path.join(out, "result.json")
    _write_json(rp, res)
    return [sp, rp], code


def _run_rate(cfg, out, workers):
    from .suites import optimizer_config

    params = cfg.params()
    q, marks, fam = cfg.noise()
    r = cfg["rate"]
    target = r["target"]
    if target is None:
        raise ConfigurationError("rate.target is required (or pass --target-energy)")
    if r["target_kind"] == "terminal_state":
        from .config import _complex_array

        target = _complex_array(target, "rate.target")
    query = RateQuery(r["target_kind"], target, cfg["integrator"]["T"], r["match_tolerance"], r["budget"])
    res_obj = minimize_rate(query, params, fam, marks, q, optimizer_config(cfg))
    files = []
    if res_obj.best_control is not None:
        cp = os.path.join(out, "control.json")
        res_obj.best_control.to_json(cp)
        files.append(cp)
    res = _base_result(cfg)
    d = res_obj.to_dict()
    d.pop("control")
    res.update(d)
    res["best_cost"] = _finite(res_obj.best_cost)
    rp = os.path.join(out, "result.json")
    _write_json(rp, res)
    return files + [rp], EXIT_OK


def _run_verify(cfg, out, workers):
    from .suites import run_suite

    suite = cfg["verify"]["suite"]
    reports = run_suite(suite, cfg, workers)
    files = []
    verdicts = {}
    for rep in reports:
        rep.config_digest = cfg.digest
        files += list(rep.write(out))
        verdicts[rep.check_name] = "pass" if rep.verdict else "fail"
    res = _base_result(cfg)
    res.update({"suite": suite, "verdicts": verdicts,
                "verdict": "pass" if all(v == "pass" for v in verdicts.values()) else "fail"})
    rp = os.path.join(out, "result.json")
    _write_json(rp, res)
    for name, v in verdicts.items():
        print(f"{suite}/{name}: {v.upper()}")
    return files + [rp], EXIT_OK if res["verdict"] == "pass" else EXIT_VERDICT


RUNNERS = {"simulate": _run_simulate, "skeleton": _run_skeleton, "rate": _run_rate, "verify": _run_verify}


def run(cfg, workers=1):
    """Execute a validated configuration; returns ``(manifest, exit_code)``."""
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "config.resolved.json"), cfg.computational())
    t0 = time.perf_counter()
    files, code = RUNNERS[cfg["experiment"]](cfg, out, workers)
    files.append(os.path.join(out, "config.resolved.json"))
    manifest = write_manifest(out, cfg, files, time.perf_counter() - t0, code)
    return manifest, code


def merge_reports(directory):
    """Collect every ``manifest.json`` below ``directory`` into one summary table."""
    rows = []
    for path in sorted(glob.glob(os.path.join(directory, "**", "manifest.json"), recursive=True)):
        with open(path) as fh:
            m = json.load(fh)
        res_path = os.path.join(os.path.dirname(path), "result.json")
        verdict = ""
        if os.path.exists(res_path):
            with open(res_path) as fh:
                verdict = json.load(fh).get("verdict", "")
        rows.append({
            "run": os.path.relpath(os.path.dirname(path), directory),
            "experiment": m.get("experiment"),
            "config_digest": m.get("config_digest", "")[:12],
            "seed": m.get("seed"),
            "jump_drift_weight": m.get("jump_drift_weight"),
            "exit_code": m.get("exit_code"),
            "verdict": verdict,
            "files": len(m.get("files", [])),
            "wall_time": m.get("wall_time"),
        })
    return rows


def _apply_flags(data, args):
    overrides = {
        "seed": args.seed,
        "output_dir": args.out,
        "jump_drift_weight": args.jump_drift_weight,
    }
    for key, val in overrides.items():
        if val is not None:
            if key in data and data[key] != val:
                log.warning("flag overrides config: %s=%r (config had %r)", key, val, data[key])
            data[key] = val
    if args.epsilon is not None:
        noise = data.setdefault("noise", {})
        if "epsilon" in noise and noise["epsilon"] != args.epsilon:
            log.warning("flag overrides config: noise.epsilon=%r (config had %r)", args.epsilon, noise["epsilon"])
        noise["epsilon"] = args.epsilon
    if getattr(args, "suite", None) is not None:
        data.setdefault("verify", {})["suite"] = args.suite
    if getattr(args, "target_energy", None) is not None:
        rate = data.setdefault("rate", {})
        rate["target_kind"] = "terminal_energy_above"
        rate["target"] = args.target_energy
    return data


def _threads(args, cfg):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("GOYLD_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigurationError("GOYLD_THREADS must be a positive integer") from None
        if n < 1:
            raise ConfigurationError("GOYLD_THREADS must be a positive integer")
        return n
    return int(cfg["threads"])


def build_parser():
    p = argparse.ArgumentParser(prog="goyld", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "skeleton", "rate", "verify"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration (built-in demo config if omitted)")
        s.add_argument("--seed", type=int)
        s.add_argument("--epsilon", type=float)
        s.add_argument("--out", help="output directory")
        s.add_argument("--jump-drift-weight", choices=sorted(DRIFT_WEIGHTS))
        s.add_argument("--threads", type=int)
        if name == "verify":
            s.add_argument("--suite", choices=SUITES, required=True)
        if name == "rate":
            s.add_argument("--target-energy", type=float)
    m = sub.add_parser("report")
    m.add_argument("--merge", required=True, metavar="DIR")
    return p


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "report":
        rows = merge_reports(args.merge)
        if not rows:
            print(f"no manifests under {args.merge}", file=sys.stderr)
            return EXIT_VALIDATION
        cols = list(rows[0])
        out = os.path.join(args.merge, "summary.csv")
        with open(out, "w", newline="") as fh:
            w = csv.DictWriter(fh, cols)
            w.writeheader()
            w.writerows(rows)
        print("  ".join(cols))
        for r in rows:
            print("  ".join(str(r[c]) for c in cols))
        return EXIT_OK
    try:
        if args.config:
            base = load_config(args.config).data
        else:
            base = default_config().data
        base["experiment"] = args.command
        cfg = validate(_apply_flags(base, args),
                       os.path.dirname(os.path.abspath(args.config)) if args.config else ".")
        workers = _threads(args, cfg)
        if workers < 1:
            raise ConfigurationError("--threads must be >= 1")
        manifest, code = run(cfg, workers)
    except (ConfigurationError, DomainError, PreconditionError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BlowUpError as exc:
        print(f"numerical blow-up at step {exc.step}", file=sys.stderr)
        return EXIT_BLOWUP
    print(f"wrote {len(manifest['files'])} files to {cfg['output_dir']} (config {cfg.digest[:12]})")
    return code


if __name__ == "__main__":
    sys.exit(main())
