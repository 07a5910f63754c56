"""Command line interface: ``symsde <command> --config <file>``.

Each command reads a JSON config, runs one computation and prints a JSON
report containing the effective config, a list of checks with pass/fail
flags, diagnostics and the wall-clock time. Exit status is 0 when every
check passes, 1 when any fails and 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import warnings
from copy import deepcopy

import numpy as np

from . import __version__
from .errors import ConfigError, SymsdeError
from .fields import check_special_orthogonal
from .mc import (
    SimulationConfig,
    estimate_ibp,
    estimate_isserlis,
    estimate_quasi_invariance,
    estimate_stein,
    save_ensemble,
    simulate,
)
from .models import MODELS, RESIDUAL_TOL, build_model, build_symmetry
from .sde import SdeModel
from .symmetry import (
    InfinitesimalSymmetry,
    flow_transformation,
    gweak_determining_residual,
    reconstruct_flow,
    verify_finite_symmetry,
    weak_determining_residual,
)
from .transform import FiniteTransformation

SYMMETRY_PARAMS = ("alpha", "beta", "a", "b")
COMMANDS = ("verify-symmetry", "verify-gweak", "reconstruct-flow", "quasi-invariance", "ibp", "stein", "isserlis",
            "simulate")


def _section(cfg, key, pointer="", required=True, default=None):
    if key not in cfg:
        if required:
            raise ConfigError(f"missing required field {key!r}", f"{pointer}/{key}")
        return default
    return cfg[key]


def _guard(pointer, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ConfigError:
        raise
    except (SymsdeError, KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"{type(err).__name__}: {err}", pointer) from err


def load_model(cfg) -> SdeModel:
    spec = _section(cfg, "model")
    if isinstance(spec, str):
        if spec not in MODELS:
            raise ConfigError(f"unknown model {spec!r}; known: {sorted(MODELS)}", "/model")
        return _guard("/model_params", build_model, spec, **cfg.get("model_params", {}))
    if not isinstance(spec, dict):
        raise ConfigError("model must be a registry id or an object", "/model")
    if "id" in spec:
        return _guard("/model", build_model, spec["id"], **spec.get("params", {}))
    desc = spec.get("descriptor", spec)
    return _guard("/model", SdeModel.from_descriptor, desc)


def load_symmetry(cfg, model: SdeModel) -> InfinitesimalSymmetry:
    spec = _section(cfg, "symmetry")
    if isinstance(spec, str):
        params = {k: cfg[k] for k in SYMMETRY_PARAMS if k in cfg}
        return _guard("/symmetry", build_symmetry, model, spec, **params)
    if not isinstance(spec, dict):
        raise ConfigError("symmetry must be a registry id or an object", "/symmetry")
    if "id" in spec:
        return _guard("/symmetry", build_symmetry, model, spec["id"], **spec.get("params", {}))
    desc = spec.get("descriptor", spec)
    return _guard("/symmetry", InfinitesimalSymmetry.from_descriptor, desc, model.vars, "", model.domain_box)


def load_sim(cfg) -> SimulationConfig:
    spec = _section(cfg, "sim")
    if not isinstance(spec, dict):
        raise ConfigError("sim must be an object", "/sim")
    for key in ("n_paths", "dt", "horizon"):
        _section(spec, key, "/sim")
    return _guard(
        "/sim", SimulationConfig, int(spec["n_paths"]), float(spec["dt"]), float(spec["horizon"]),
        int(spec.get("seed", 0)), int(spec.get("chunk_size", 4096)),
        None if spec.get("threads") is None else int(spec["threads"]),
    )


def _tol(cfg, key, default):
    tol = cfg.get("tolerances", {})
    return float(tol.get(key, default))


def _check(name, estimate, tolerance, passed, std_error=None, **extra):
    return {"name": name, "estimate": estimate, "std_error": std_error, "tolerance": tolerance, "pass": bool(passed),
            **extra}


# ---------------------------------------------------------------------------
# commands


def cmd_verify(cfg, kind):
    model = load_model(cfg)
    V = load_symmetry(cfg, model)
    points = cfg.get("points")
    fn = weak_determining_residual if kind == "weak" else gweak_determining_residual
    res = _guard("/points", fn, model, V, points)
    tol = _tol(cfg, "residual", RESIDUAL_TOL.get(model.name, 1e-9))
    checks = [_check("determining_residual", res.sup, tol, res.passed(tol), worst_point=list(res.worst_point))]
    results = {"residual": res.as_dict(), "symmetry": V.to_descriptor()}
    if "lambdas" in cfg:
        rep = _guard(
            "/lambdas", verify_finite_symmetry, model, V, [float(x) for x in cfg["lambdas"]], points,
            _tol(cfg, "finite", 1e-5), kind, int(cfg.get("flow_steps", 1000)), cfg.get("derivatives", "fd"),
        )
        results["finite"] = rep.as_dict()
        checks.append(_check("finite_symmetry", max(rep.violation), rep.tol, rep.passed))
    return checks, results


def cmd_flow(cfg):
    model = load_model(cfg)
    V = load_symmetry(cfg, model)
    lam = float(_section(cfg, "lambda"))
    points = np.asarray(cfg["points"], dtype=float) if "points" in cfg else model.sample_grid(8)
    steps = int(cfg.get("flow_steps", 1000))
    flow = _guard("/lambda", reconstruct_flow, V, lam, points, steps, 0, None, True)
    orth_tol = _tol(cfg, "orthogonality", 1e-9)
    orth = check_special_orthogonal(lambda p: flow.B, points, orth_tol)
    rich_tol = _tol(cfg, "richardson", 1e-8)
    checks = [
        _check("rotation_orthogonality", orth.worst, orth_tol, orth.passed),
        _check("richardson_difference", flow.richardson_error, rich_tol, flow.richardson_error <= rich_tol),
    ]
    results = {
        "lambda": lam, "points": points.tolist(), "phi": flow.phi.tolist(), "B": flow.B.tolist(),
        "eta": flow.eta.tolist(), "h": flow.h.tolist(),
    }
    return checks, results


def _transformation(cfg, model):
    if "transform" in cfg:
        return _guard("/transform", FiniteTransformation.from_descriptor, cfg["transform"], model.vars, model.m,
                      model.domain_box)
    V = load_symmetry(cfg, model)
    lam = float(_section(cfg, "lambda"))
    return flow_transformation(V, lam, int(cfg.get("flow_steps", 1000)))


def _estimator_checks(res, cfg, name, abs_default=0.01):
    k = _tol(cfg, "k_se", 3.0)
    abs_tol = _tol(cfg, "abs", abs_default)
    bound = k * res.std_error + abs_tol
    return [_check(name, res.estimate, bound, res.within(k, abs_tol), std_error=res.std_error)]


def cmd_quasi(cfg):
    model = load_model(cfg)
    T = _transformation(cfg, model)
    sim = load_sim(cfg)
    g = _section(cfg, "g")
    t = float(_section(cfg, "t"))
    res = _guard("/g", estimate_quasi_invariance, model, T, g, t, sim, bool(cfg.get("common_random_numbers", True)))
    return _estimator_checks(res, cfg, "quasi_invariance"), res.as_dict()


def cmd_ibp(cfg):
    model = load_model(cfg)
    V = load_symmetry(cfg, model)
    sim = load_sim(cfg)
    F = _section(cfg, "F")
    t = float(_section(cfg, "t"))
    res = _guard("/F", estimate_ibp, model, V, F, t, sim, bool(cfg.get("strict", False)))
    return _estimator_checks(res, cfg, "integration_by_parts"), res.as_dict()


def cmd_gaussian(cfg, which):
    sim = load_sim(cfg) if "sim" in cfg and "dt" in cfg["sim"] else None
    spec = _section(cfg, "sim")
    if sim is None:
        sim = _guard("/sim", SimulationConfig, int(_section(spec, "n_paths", "/sim")), 1.0, 1.0,
                     int(spec.get("seed", 0)), int(spec.get("chunk_size", 4096)))
    F = _section(cfg, "F")
    t = float(_section(cfg, "t"))
    fn = estimate_stein if which == "stein" else estimate_isserlis
    res = _guard("/F", fn, t, F, sim)
    checks = _estimator_checks(res, cfg, which, abs_default=0.0)
    if "expected" in cfg:
        k = _tol(cfg, "k_se", 3.0)
        exp = float(cfg["expected"])
        d = res.diagnostics
        for side in ("lhs", "rhs"):
            checks.append(_check(f"{side}_matches_expected", d[side], k * d[side + "_se"],
                                 abs(d[side] - exp) <= k * d[side + "_se"], d[side + "_se"], expected=exp))
    return checks, res.as_dict()


def cmd_simulate(cfg, csv_path=None):
    model = load_model(cfg)
    sim = load_sim(cfg)
    ens = _guard("/sim", simulate, model, sim)
    if "dump" in cfg:
        save_ensemble(ens, cfg["dump"])
    mean = ens.states.mean(axis=0)
    var = ens.states.var(axis=0, ddof=1) if ens.n_paths > 1 else np.zeros_like(mean)
    finite = bool(np.isfinite(ens.states).all())
    results = {
        "n_paths": ens.n_paths, "steps": ens.steps, "final_mean": mean[-1].tolist(), "final_variance": var[-1].tolist(),
        "dump": cfg.get("dump"),
    }
    series = (ens.time_grid, mean, var)
    return [_check("finite_paths", float(finite), 1.0, finite)], results, series


# ---------------------------------------------------------------------------
# entry point


def _read_config(path, seed_override):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON: {err}") from err
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if "checks" in cfg and isinstance(cfg.get("config"), dict):
        cfg = cfg["config"]  # a previous report: rerun its echoed config
    cfg = deepcopy(cfg)
    return _normalise(cfg, seed_override)


def _normalise(cfg, seed_override=None):
    cfg = deepcopy(cfg)
    if seed_override is not None:
        cfg.setdefault("sim", {})["seed"] = int(seed_override)
    if isinstance(cfg.get("sim"), dict):
        cfg["sim"].setdefault("seed", 0)
    return cfg


def _fmt(v):
    return "" if v is None else repr(v)


def _write_csv(path, checks, results, series=None):
    """Checks and any per-term breakdown, or per-time path statistics for ``simulate``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if series is not None:
            grid, mean, var = series
            n = mean.shape[1]
            w.writerow(["time"] + [f"mean_{i}" for i in range(n)] + [f"var_{i}" for i in range(n)])
            for k, t in enumerate(grid):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in mean[k]] + [repr(float(v)) for v in var[k]])
            return
        w.writerow(["kind", "name", "estimate", "std_error", "tolerance", "pass"])
        for c in checks:
            w.writerow(["check", c["name"], _fmt(c["estimate"]), _fmt(c["std_error"]), _fmt(c["tolerance"]), c["pass"]])
        terms = results.get("terms") or {}
        term_se = results.get("term_std_errors") or {}
        for name, value in terms.items():
            w.writerow(["term", name, _fmt(value), _fmt(term_se.get(name)), "", ""])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def run(command, cfg, csv_path=None):
    """Run ``command`` on a parsed config and return the report dict."""
    start = time.perf_counter()
    series = None
    if cfg.get("command", command) != command:
        raise ConfigError(f"config is for command {cfg['command']!r}, not {command!r}", "/command")
    cfg = {"command": command, **{k: v for k, v in cfg.items() if k != "command"}}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if command == "verify-symmetry":
            checks, results = cmd_verify(cfg, "weak")
        elif command == "verify-gweak":
            checks, results = cmd_verify(cfg, "gweak")
        elif command == "reconstruct-flow":
            checks, results = cmd_flow(cfg)
        elif command == "quasi-invariance":
            checks, results = cmd_quasi(cfg)
        elif command == "ibp":
            checks, results = cmd_ibp(cfg)
        elif command in ("stein", "isserlis"):
            checks, results = cmd_gaussian(cfg, command)
        elif command == "simulate":
            checks, results, series = cmd_simulate(cfg)
        else:
            raise ConfigError(f"unknown command {command!r}")
    report = {
        "version": __version__,
        "command": command,
        "config": cfg,
        "checks": checks,
        "pass": all(c["pass"] for c in checks),
        "results": results,
        "warnings": [str(w.message) for w in caught],
        "wall_clock_seconds": time.perf_counter() - start,
    }
    if csv_path:
        _write_csv(csv_path, checks, results, series)
    return _jsonable(report)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="symsde", description="Symmetry checks and Monte Carlo identities for SDEs")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON config file (or a previous report to rerun)")
    parser.add_argument("--csv", help="write a CSV table of checks (or path statistics for simulate)")
    parser.add_argument("--seed-override", type=int, help="replace sim.seed")
    parser.add_argument("--output", help="also write the JSON report to this file")
    args = parser.parse_args(argv)
    try:
        cfg = _read_config(args.config, args.seed_override)
        report = run(args.command, cfg, args.csv)
    except ConfigError as err:
        print(json.dumps({"error": str(err), "pointer": err.pointer}), file=sys.stderr)
        return 2
    text = json.dumps(report, indent=2)
    print(text)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    return 0 if report["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
