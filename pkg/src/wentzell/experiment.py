"""Experiment configuration, pipelines and artifact writers behind the CLI.

A config is a YAML mapping with fixed sections; every key is known in
advance (unknown keys are rejected) and dimensional keys carry their unit
in the name, e.g. ``T_seconds``.  Missing keys take the defaults below.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import platform
import time
from dataclasses import dataclass

import numpy as np
import scipy
import yaml

from . import __version__
from .bounds import (BoundInputs, SweepRecord, calibrate_kappa, choose_delta, eval_cost_bound, eval_M, eval_N,
                     log_cost_bound)
from .carleman import build_morse, carleman_ratio, default_s_values, empirical_obs_constant
from .control import ControlOptions, minimize_J, reduce_target, smooth_target, solution_record, write_solution
from .errors import ConfigError, DataError, NonConvergenceError
from .forward import TimeSchedule, solve_forward, write_trajectory_bin, write_trajectory_csv
from .grid import StatePair, make_grid, norm_mu, read_state_csv, sobolev_norms, write_state_csv
from .operators import CoefficientSet, assemble, control_mask
from .semilinear import Nonlinearity, PicardOptions, Term, picard_control

__all__ = [
    "DEFAULTS",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "run",
    "emit_plotdata",
    "SUBCOMMANDS",
]

SCHEMA_VERSION = 1

DEFAULTS = {
    "domain": {"dim": 1, "extents_m": [1.0], "cells": [64]},
    "time": {"T_seconds": 1.0, "nt_steps": 128, "theta": 0.5},
    "omega": {"box_m": [[0.3, 0.7]]},
    "coefficients": {"A": 1.0, "A_gamma": 1.0, "a": 0.0, "b": 0.0, "B": 0.0, "B_gamma": 0.0},
    "initial": {"kind": "zero", "value": 0.0, "path": None},
    "target": {"kind": "smooth_random", "modes": 3, "amplitude": 1.0, "value": 0.0, "path": None},
    "control": {"eps": 0.1, "eps_relative": True, "eps_sweep": [0.5, 0.2, 0.1, 0.05, 0.02]},
    "solver": {"tol_factor": 1e-6, "max_iter": 5000, "sweep_max_iter": 50000, "gramian": "auto"},
    "bounds": {"kappa": "calibrate", "C_cal": 1.0},
    "carleman": {"m": 2.0, "lambda": 2.0, "s_factors": [4.0, 8.0, 16.0], "probes": 5,
                 "obs_T_seconds": [0.5, 1.0, 2.0], "obs_dt_seconds": 1.0 / 64, "obs_theta": 1.0},
    "semilinear": {"F": [{"kind": "sine", "coef": 0.1, "arg": "state"}], "G": [],
                   "tol_fp": 1e-6, "max_iter": 50, "damping": 1.0},
    "seed": 0,
    "output": {"directory": "wentzell_out"},
}

SUBCOMMANDS = ("solve", "control", "bound", "sweep", "carleman-check", "semilinear", "calibrate")

_TERM_KEYS = {"kind", "coef", "arg", "scale"}


def _merge(defaults, given, path=""):
    if not isinstance(given, dict):
        raise ConfigError(f"section {path or '<root>'} must be a mapping")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys at {path or '<root>'}: {sorted(unknown)}")
    out = {}
    for key, dval in defaults.items():
        sub = f"{path}.{key}" if path else key
        if key not in given:
            out[key] = copy.deepcopy(dval)
        elif isinstance(dval, dict):
            out[key] = _merge(dval, given[key], sub)
        else:
            out[key] = given[key]
    return out


def _num(x, name, positive=False, integer=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{name} must be a number, got {x!r}")
    if integer and int(x) != x:
        raise ConfigError(f"{name} must be an integer, got {x!r}")
    if not math.isfinite(x) or (positive and x <= 0):
        raise ConfigError(f"{name} must be {'positive and ' if positive else ''}finite, got {x!r}")
    return int(x) if integer else float(x)


def _validate(cfg, base_dir):
    d = cfg["domain"]
    dim = _num(d["dim"], "domain.dim", integer=True)
    if dim not in (1, 2):
        raise ConfigError("domain.dim must be 1 or 2")
    if len(d["extents_m"]) != dim or len(d["cells"]) != dim:
        raise ConfigError("domain.extents_m and domain.cells need one entry per axis")
    for v in d["extents_m"]:
        _num(v, "domain.extents_m", positive=True)
    for v in d["cells"]:
        _num(v, "domain.cells", positive=True, integer=True)
    t = cfg["time"]
    _num(t["T_seconds"], "time.T_seconds", positive=True)
    _num(t["nt_steps"], "time.nt_steps", positive=True, integer=True)
    _num(t["theta"], "time.theta")
    if np.shape(cfg["omega"]["box_m"]) != (dim, 2):
        raise ConfigError("omega.box_m needs one [lo, hi] pair per axis")
    c = cfg["control"]
    _num(c["eps"], "control.eps", positive=True)
    if not isinstance(c["eps_relative"], bool):
        raise ConfigError("control.eps_relative must be true or false")
    if not c["eps_sweep"]:
        raise ConfigError("control.eps_sweep must not be empty")
    for v in c["eps_sweep"]:
        _num(v, "control.eps_sweep", positive=True)
    k = cfg["bounds"]["kappa"]
    if k != "calibrate":
        _num(k, "bounds.kappa")
        if k < 0:
            raise ConfigError("bounds.kappa must be non-negative or 'calibrate'")
    _num(cfg["bounds"]["C_cal"], "bounds.C_cal", positive=True)
    _num(cfg["seed"], "seed", integer=True)
    for sec in ("initial", "target"):
        path = cfg[sec]["path"]
        if cfg[sec]["kind"] == "csv":
            if not path:
                raise ConfigError(f"{sec}.path required for kind 'csv'")
            full = path if os.path.isabs(path) else os.path.join(base_dir, path)
            if not os.path.isfile(full):
                raise ConfigError(f"{sec}.path {path!r} does not exist")
    for name in ("a", "b", "A", "A_gamma", "B_gamma"):
        val = cfg["coefficients"][name]
        if isinstance(val, str):
            full = val if os.path.isabs(val) else os.path.join(base_dir, val)
            if not os.path.isfile(full):
                raise ConfigError(f"coefficients.{name} file {val!r} does not exist")
        else:
            _num(val, f"coefficients.{name}")
    for terms in (cfg["semilinear"]["F"], cfg["semilinear"]["G"]):
        for term in terms:
            if not isinstance(term, dict) or set(term) - _TERM_KEYS or "kind" not in term:
                raise ConfigError(f"semilinear term {term!r} must be a mapping with keys among {sorted(_TERM_KEYS)}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated config; ``data`` is the full mapping with defaults filled in."""

    data: dict
    base_dir: str = "."

    def __getitem__(self, key):
        return self.data[key]

    def to_yaml(self):
        return yaml.safe_dump(self.data, sort_keys=True)

    @property
    def hash(self):
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_changes(self, **sections):
        data = copy.deepcopy(self.data)
        for sec, vals in sections.items():
            if isinstance(vals, dict):
                data[sec].update(vals)
            else:
                data[sec] = vals
        return parse_config(data, self.base_dir)


def parse_config(raw, base_dir="."):
    if raw is None:
        raw = {}
    data = _merge(DEFAULTS, raw)
    _validate(data, base_dir)
    return ExperimentConfig(data, base_dir)


def load_config(path):
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    return parse_config(raw, os.path.dirname(os.path.abspath(path)))


# ----------------------------------------------------------------------
# problem construction
# ----------------------------------------------------------------------
@dataclass
class Problem:
    grid: object
    sched: TimeSchedule
    coeffs: CoefficientSet
    ops: object
    mask: np.ndarray
    Y0: StatePair
    Y1: StatePair
    rng: np.random.Generator


def _coef_value(val, cfg, n_expected):
    if isinstance(val, str):
        full = val if os.path.isabs(val) else os.path.join(cfg.base_dir, val)
        arr = np.loadtxt(full, delimiter=",", ndmin=1)
        if arr.shape[-1] != n_expected:
            raise DataError(f"{val}: expected {n_expected} values per row, got {arr.shape[-1]}")
        return arr
    return float(val)


def _state_from(section, g, rng, cfg):
    kind = section["kind"]
    if kind == "zero":
        return StatePair.zeros(g)
    if kind == "constant":
        return StatePair.constant(g, section["value"])
    if kind == "smooth_random":
        return smooth_target(g, rng, modes=int(section.get("modes", 3)), scale=float(section.get("amplitude", 1.0)))
    if kind == "csv":
        path = section["path"]
        full = path if os.path.isabs(path) else os.path.join(cfg.base_dir, path)
        return read_state_csv(full, g)
    raise ConfigError(f"unknown state kind {kind!r} (zero, constant, smooth_random, csv)")


def build_problem(cfg):
    d, t, c = cfg["domain"], cfg["time"], cfg["coefficients"]
    extents = d["extents_m"][0] if d["dim"] == 1 else tuple(d["extents_m"])
    cells = d["cells"][0] if d["dim"] == 1 else tuple(d["cells"])
    g = make_grid(extents, cells)
    sched = TimeSchedule(float(t["T_seconds"]), int(t["nt_steps"]), float(t["theta"]))
    nb, ng = g.n_bulk, g.n_bdry
    B = c["B"]
    coeffs = CoefficientSet.build(
        g,
        A=_coef_value(c["A"], cfg, nb), A_gamma=_coef_value(c["A_gamma"], cfg, ng),
        a=_coef_value(c["a"], cfg, nb), b=_coef_value(c["b"], cfg, ng),
        B=np.asarray(B, float) if not isinstance(B, str) else _coef_value(B, cfg, nb * g.dim).reshape(-1, nb, g.dim),
        B_gamma=_coef_value(c["B_gamma"], cfg, ng),
    )
    ops = assemble(g, coeffs)
    box = cfg["omega"]["box_m"]
    mask = control_mask(g, box[0] if g.dim == 1 else box)
    rng = np.random.default_rng(int(cfg["seed"]))
    # target first so it does not depend on the initial-state kind
    Y1 = _state_from(cfg["target"], g, rng, cfg)
    Y0 = _state_from(cfg["initial"], g, rng, cfg)
    return Problem(g, sched, coeffs, ops, mask, Y0, Y1, rng)


def _control_opts(cfg, sweep=False, x0=None):
    s = cfg["solver"]
    return ControlOptions(tol_factor=float(s["tol_factor"]),
                          max_iter=int(s["sweep_max_iter"] if sweep else s["max_iter"]),
                          gramian=s["gramian"], x0=x0)


def _eps_abs(cfg, Z1norm, value):
    return value * Z1norm if cfg["control"]["eps_relative"] else value


def _bound_inputs(p, Z1, eps, kappa):
    return BoundInputs(T=p.sched.T, eps=eps, norms=p.coeffs.sup_norms,
                       target_norms=sobolev_norms(Z1, p.grid), kappa=kappa)


# ----------------------------------------------------------------------
# artifacts
# ----------------------------------------------------------------------
def _fmt(x):
    return repr(float(x))


def emit_plotdata(records, path):
    """Write ``inv_eps, ln_cost, ln_bound, flagged`` rows for overlay plots.

    ``records`` are dicts with ``eps``, ``cost``, ``ln_bound`` and
    ``bound_overflow``.  ``flagged`` is 1 when the linear-scale bound
    overflowed or a logarithm is infinite (zero cost or zero target).
    """
    records = list(records)
    if not records:
        raise DataError("no records to plot")
    with open(path, "w") as fh:
        fh.write(f"# wentzell plotdata v{SCHEMA_VERSION}: inv_eps = 1/eps, ln_cost = ln(control cost), "
                 "ln_bound = ln(cost bound), flagged = 1 if the bound overflowed or a log is infinite\n")
        fh.write("inv_eps,ln_cost,ln_bound,flagged\n")
        for r in records:
            ln_cost = math.log(r["cost"]) if r["cost"] > 0 else -math.inf
            ln_bound = r["ln_bound"] if r["ln_bound"] is not None else math.nan
            flagged = int(bool(r.get("bound_overflow")) or not (math.isfinite(ln_cost) and math.isfinite(ln_bound)))
            fh.write(f"{_fmt(1.0 / r['eps'])},{_fmt(ln_cost)},{_fmt(ln_bound)},{flagged}\n")


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _write_jsonl(path, records):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({k: _jsonable(v) for k, v in r.items()}, sort_keys=True) + "\n")


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(f"# wentzell v{SCHEMA_VERSION}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


# ----------------------------------------------------------------------
# pipelines
# ----------------------------------------------------------------------
def _run_solve(cfg, p, out):
    traj = solve_forward(p.ops, p.Y0, None, p.sched)
    write_trajectory_csv(os.path.join(out, "trajectory.csv"), traj)
    write_trajectory_bin(os.path.join(out, "trajectory.bin"), traj)
    write_state_csv(os.path.join(out, "terminal.csv"), traj.terminal, p.grid)
    return {"terminal_norm": norm_mu(traj.terminal, p.grid)}


def _run_control(cfg, p, out):
    Z1 = reduce_target(p.ops, p.sched, p.Y0, p.Y1)
    zn = norm_mu(Z1, p.grid)
    eps = _eps_abs(cfg, zn, float(cfg["control"]["eps"]))
    t0 = time.perf_counter()
    sol = minimize_J(p.ops, p.sched, p.mask, Z1, eps, _control_opts(cfg))
    wall = 1e3 * (time.perf_counter() - t0)
    write_solution(sol, p.grid, os.path.join(out, "solution"))
    rec = _record(cfg, p, Z1, sol, wall, cfg["bounds"]["kappa"])
    _write_jsonl(os.path.join(out, "records.jsonl"), [rec])
    return {"cost": sol.cost, "target_gap": sol.target_gap, "iterations": sol.iterations}


def _record(cfg, p, Z1, sol, wall_ms, kappa):
    rec = {"eps": sol.eps, "cost": sol.cost, "target_gap": sol.target_gap, "iterations": sol.iterations,
           "bound": None, "ln_bound": None, "bound_overflow": False, "kappa": None,
           "wall_ms": round(wall_ms, 3), "target_norm": sol.target_norm}
    if kappa != "calibrate":
        _attach_bound(rec, _bound_inputs(p, Z1, sol.eps, float(kappa)))
    return rec


def _attach_bound(rec, inp):
    val, overflow = eval_cost_bound(inp, with_flag=True)
    rec.update(bound=val, ln_bound=log_cost_bound(inp), bound_overflow=overflow, kappa=inp.kappa)


def _sweep(cfg, p):
    Z1 = reduce_target(p.ops, p.sched, p.Y0, p.Y1)
    zn = norm_mu(Z1, p.grid)
    records, sols, x0 = [], [], None
    for f in sorted(cfg["control"]["eps_sweep"], reverse=True):
        eps = _eps_abs(cfg, zn, float(f))
        t0 = time.perf_counter()
        sol = minimize_J(p.ops, p.sched, p.mask, Z1, eps, _control_opts(cfg, sweep=True, x0=x0))
        wall = 1e3 * (time.perf_counter() - t0)
        x0 = sol.PhiT_hat if sol.iterations else x0
        records.append(_record(cfg, p, Z1, sol, wall, "calibrate"))
        sols.append(sol)
    kappa = cfg["bounds"]["kappa"]
    if kappa == "calibrate":
        kappa = calibrate_kappa([SweepRecord(_bound_inputs(p, Z1, r["eps"], 0.0), r["cost"]) for r in records])
    for r in records:
        _attach_bound(r, _bound_inputs(p, Z1, r["eps"], float(kappa)))
    return Z1, records, float(kappa)


def _run_sweep(cfg, p, out):
    _, records, kappa = _sweep(cfg, p)
    _write_jsonl(os.path.join(out, "records.jsonl"), records)
    emit_plotdata(records, os.path.join(out, "plotdata.csv"))
    _write_csv(os.path.join(out, "sweep.csv"), ["eps", "cost", "target_gap", "iterations", "bound"],
               [(r["eps"], r["cost"], r["target_gap"], r["iterations"], r["bound"]) for r in records])
    return {"kappa": kappa, "points": len(records)}


def _run_calibrate(cfg, p, out):
    Z1, records, kappa = _sweep(cfg.with_changes(bounds={"kappa": "calibrate"}), p)
    with open(os.path.join(out, "kappa.json"), "w") as fh:
        json.dump({"kappa": kappa, "points": len(records), "omega": cfg["omega"]["box_m"],
                   "cells": cfg["domain"]["cells"]}, fh, indent=2, sort_keys=True)
    emit_plotdata(records, os.path.join(out, "plotdata.csv"))
    return {"kappa": kappa}


def _run_bound(cfg, p, out):
    Z1 = reduce_target(p.ops, p.sched, p.Y0, p.Y1)
    eps = _eps_abs(cfg, norm_mu(Z1, p.grid), float(cfg["control"]["eps"]))
    kappa = cfg["bounds"]["kappa"]
    kappa = 1.0 if kappa == "calibrate" else float(kappa)
    inp = _bound_inputs(p, Z1, eps, kappa)
    delta, K1, K2 = choose_delta(inp, float(cfg["bounds"]["C_cal"]))
    rows = [("N", eval_N(inp)), ("M", eval_M(inp)), ("delta", delta), ("K1", K1), ("K2", K2),
            ("bound", eval_cost_bound(inp)), ("ln_bound", log_cost_bound(inp)), ("kappa", kappa), ("eps", eps)]
    _write_csv(os.path.join(out, "bound.csv"), ["quantity", "value"], rows)
    return dict(rows)


def _run_carleman(cfg, p, out):
    cc = cfg["carleman"]
    if any(p.ops.coeffs.sup_norms):
        # the weighted estimate is stated for the potential-free adjoint
        ops = assemble(p.grid, CoefficientSet.build(p.grid, A=p.coeffs.A, A_gamma=p.coeffs.A_gamma))
    else:
        ops = p.ops
    box = cfg["omega"]["box_m"]
    omega = box[0] if p.grid.dim == 1 else box
    T = p.sched.T
    base = build_morse(p.grid, omega, T=T, m=float(cc["m"]), lam=float(cc["lambda"]))
    rows = []
    for k in range(int(cc["probes"])):
        PhiT = StatePair.from_vector(p.rng.standard_normal(p.grid.n_total), p.grid)
        for f in cc["s_factors"]:
            s = float(f) * (T + T * T)
            rows.append((k, s, base.lam, carleman_ratio(ops, p.sched, base.with_params(s=s), PhiT)))
    _write_csv(os.path.join(out, "carleman.csv"), ["probe", "s", "lambda", "ratio"], rows)
    obs = []
    for Tv in cc["obs_T_seconds"]:
        nt = max(2, int(round(float(Tv) / float(cc["obs_dt_seconds"]))))
        obs.append((float(Tv), empirical_obs_constant(p.ops, TimeSchedule(float(Tv), nt, float(cc["obs_theta"])),
                                                      p.mask)))
    _write_csv(os.path.join(out, "observability.csv"), ["T", "obs_constant"], obs)
    ratios = [r[3] for r in rows]
    return {"max_ratio": max(ratios), "median_ratio": float(np.median(ratios))}


def _nonlinearity(cfg, dim):
    sl = cfg["semilinear"]

    def terms(lst):
        return [Term(t["kind"], float(t.get("coef", 1.0)), t.get("arg", "state"), float(t.get("scale", 1.0)))
                for t in lst]

    return Nonlinearity(F=terms(sl["F"]), G=terms(sl["G"]), dim=dim)


def _run_semilinear(cfg, p, out):
    sl = cfg["semilinear"]
    nl = _nonlinearity(cfg, p.grid.dim)
    eps = _eps_abs(cfg, norm_mu(p.Y1, p.grid), float(cfg["control"]["eps"]))
    opts = PicardOptions(tol_fp=float(sl["tol_fp"]), max_iter=int(sl["max_iter"]),
                         damping=float(sl["damping"]), control=_control_opts(cfg))
    try:
        res = picard_control(p.ops, p.Y0, p.Y1, eps, nl, p.sched, p.mask, opts)
    except NonConvergenceError as exc:
        if exc.history:
            _write_csv(os.path.join(out, "picard.csv"), ["iteration", "fp_residual", "cost", "target_gap"],
                       exc.history)
        raise
    _write_csv(os.path.join(out, "picard.csv"), ["iteration", "fp_residual", "cost", "target_gap"], res.history)
    write_solution(res.solution, p.grid, os.path.join(out, "solution"))
    return {"iterations": res.iterations, "fp_residual": res.fp_residual, "nonlinear_gap": res.nonlinear_gap,
            "eps": eps}


_PIPELINES = {
    "solve": _run_solve,
    "control": _run_control,
    "bound": _run_bound,
    "sweep": _run_sweep,
    "calibrate": _run_calibrate,
    "carleman-check": _run_carleman,
    "semilinear": _run_semilinear,
}


def run(cfg, subcommand, out_dir=None):
    """Run one pipeline and write its artifacts plus ``manifest.json``.

    Returns the summary dict.  Errors propagate as :class:`WentzellError`
    subclasses; the output directory is only created once the problem has
    been built successfully.
    """
    if subcommand not in _PIPELINES:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    out = out_dir or cfg["output"]["directory"]
    t0 = time.perf_counter()
    problem = build_problem(cfg)
    t_build = time.perf_counter() - t0
    os.makedirs(out, exist_ok=True)
    summary = _PIPELINES[subcommand](cfg, problem, out)
    manifest = {
        "subcommand": subcommand,
        "config_hash": cfg.hash,
        "config": cfg.data,
        "seed": cfg["seed"],
        "schema_version": SCHEMA_VERSION,
        "versions": {"wentzell": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "timings_s": {"build": round(t_build, 6), "total": round(time.perf_counter() - t0, 6)},
        "summary": {k: _jsonable(v) if isinstance(v, float) else v for k, v in summary.items()},
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return summary
