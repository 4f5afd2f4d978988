"""Command-line interface: config parsing, dispatch, and report emission.

Configuration comes from an INI-style file (sections: model, potential, sim,
grid, experiment, run) with command-line flags taking precedence; the
effective configuration is echoed into every JSON report.  Exit status is 0
on success, 1 when a declared acceptance check fails (the report is still
written, with machine-readable reasons), and 2 on configuration errors.
Only the output directory and worker count may come from the environment
(TORUSGAS_OUTDIR, TORUSGAS_WORKERS).
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys

import numpy as np

from .kernel import (ModelParams, escape_rate, jump_drift, jump_moment,
                     q_variance, idealized_rate)
from .potential import PotentialSpec
from .sim import SimConfig, TrackFlags, simulate, run_ensemble
from .grid import (GridSpec, build_grid_chain, save_grid, load_grid,
                   split_cycle_stats, ergodicity_report)
from .limits import run_experiment
from . import sweeps

SCHEMA_VERSION = 1

TRAJECTORY_HEADER = ["t", "x", "p", "H", "D", "J", "N", "M_comp", "bracket", "L"]
KERNEL_TABLE_HEADER = ["p", "escape_rate", "jump_drift", "second_moment",
                       "q_variance", "idealized_rate"]

_KNOWN_KEYS = {
    "model": {"lam"},
    "potential": {"shape", "v0", "harmonics"},
    "sim": {"horizon", "x0", "p0", "p_hat0", "checkpoints", "n_paths",
            "track_companion", "track_a_plus", "track_coins"},
    "grid": {"n_x", "n_p", "p_max", "samples_per_cell", "low_row_boost"},
    "experiment": {"kind", "lam_list", "t_macro", "n_paths", "p_hat0_list"},
    "run": {"seed", "workers", "out"},
}


class ConfigError(ValueError):
    pass


def _load_config(path):
    cfg = configparser.ConfigParser()
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        cfg.read(path)
        for section in cfg.sections():
            if section not in _KNOWN_KEYS:
                raise ConfigError(f"unknown config section [{section}]")
            extra = set(cfg[section]) - _KNOWN_KEYS[section]
            if extra:
                raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")
            if section == "model" and "eta" in cfg[section]:
                raise ConfigError("eta is fixed by the unit convention")
    return cfg


def _get(cfg, section, key, flag_value, cast, default):
    if flag_value is not None:
        return flag_value
    if cfg.has_option(section, key):
        return cast(cfg.get(section, key))
    return default


def _floats(text):
    return tuple(float(v) for v in str(text).replace(",", " ").split())


def _model(cfg, args) -> ModelParams:
    lam = _get(cfg, "model", "lam", getattr(args, "lam", None), float, 0.1)
    try:
        return ModelParams(float(lam))
    except ValueError as exc:
        raise ConfigError(str(exc))


def _potential(cfg, args) -> PotentialSpec:
    shape = _get(cfg, "potential", "shape", getattr(args, "shape", None), str, "cosine")
    v0 = _get(cfg, "potential", "v0", getattr(args, "v0", None), float, 1.0)
    harmonics = None
    if cfg.has_option("potential", "harmonics"):
        pairs = _floats(cfg.get("potential", "harmonics"))
        if len(pairs) % 2:
            raise ConfigError("harmonics need (cos, sin) pairs")
        harmonics = tuple(zip(pairs[::2], pairs[1::2]))
    try:
        return PotentialSpec(shape=shape, v0=float(v0), harmonics=harmonics)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _run_opts(cfg, args):
    seed = int(_get(cfg, "run", "seed", getattr(args, "seed", None), int, 0))
    workers = _get(cfg, "run", "workers", getattr(args, "workers", None), int,
                   int(os.environ.get("TORUSGAS_WORKERS", "1")))
    out = _get(cfg, "run", "out", getattr(args, "out", None), str,
               os.environ.get("TORUSGAS_OUTDIR", "."))
    os.makedirs(out, exist_ok=True)
    return seed, int(workers), out


def _write_csv(path, header, columns):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _write_report(path, payload):
    payload = dict(payload)
    payload["schema_version"] = SCHEMA_VERSION
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1, default=float)
        fh.write("\n")


def _echo(model, pot, seed, workers, extra=None):
    # the worker count is deliberately not echoed: artifacts are contracted
    # to be byte-identical for any worker count
    out = {"model": {"lam": model.lam, "eta": model.eta},
           "potential": {"shape": pot.shape, "v0": getattr(pot, "v0", None)},
           "seed": seed}
    out.update(extra or {})
    return out


def cmd_kernel_table(cfg, args):
    model = _model(cfg, args)
    pot = _potential(cfg, args)
    seed, workers, out = _run_opts(cfg, args)
    ps = np.linspace(-args.p_range, args.p_range, args.n_points)
    cols = [ps, escape_rate(model, ps), jump_drift(model, ps),
            jump_moment(model, ps, 2), q_variance(model, ps),
            idealized_rate(model, ps)]
    path = os.path.join(out, "kernel_table.csv")
    _write_csv(path, KERNEL_TABLE_HEADER, cols)
    _write_report(os.path.join(out, "kernel_table.json"),
                  {"command": "kernel-table", "artifact": path,
                   "config": _echo(model, pot, seed, workers,
                                   {"p_range": args.p_range,
                                    "n_points": args.n_points})})
    return 0


def cmd_sweep_inequalities(cfg, args):
    model = _model(cfg, args)
    pot = _potential(cfg, args)
    seed, workers, out = _run_opts(cfg, args)
    results = sweeps.full_sweep_suite(pot)
    path = os.path.join(out, "sweep_inequalities.json")
    payload = json.loads(sweeps.suite_to_json(results))
    payload["command"] = "sweep-inequalities"
    payload["config"] = _echo(model, pot, seed, workers)
    payload["failures"] = [r.name for r in results if not r.passed]
    _write_report(path, payload)
    return 0 if payload["all_passed"] else 1


def _sim_config(cfg, args, model, pot, seed):
    horizon = float(_get(cfg, "sim", "horizon", getattr(args, "horizon", None),
                         float, 10.0))
    x0 = float(_get(cfg, "sim", "x0", getattr(args, "x0", None), float, 0.0))
    p0 = _get(cfg, "sim", "p0", getattr(args, "p0", None), float, None)
    p_hat0 = float(_get(cfg, "sim", "p_hat0", getattr(args, "p_hat0", None),
                        float, 0.0))
    cps = _get(cfg, "sim", "checkpoints", getattr(args, "checkpoints", None),
               _floats, ())
    if isinstance(cps, str):
        cps = _floats(cps)
    track = TrackFlags(
        companion=bool(int(_get(cfg, "sim", "track_companion", None, int, 0))),
        a_plus=bool(int(_get(cfg, "sim", "track_a_plus", None, int, 0))),
        coins=bool(int(_get(cfg, "sim", "track_coins", None, int, 0))))
    try:
        return SimConfig(model=model, potential=pot, horizon=horizon, x0=x0,
                         p0=None if p0 is None else float(p0),
                         p_hat0=p_hat0, checkpoints=tuple(cps), seed=seed,
                         track=track)
    except ValueError as exc:
        raise ConfigError(str(exc))


def cmd_simulate(cfg, args):
    model = _model(cfg, args)
    pot = _potential(cfg, args)
    seed, workers, out = _run_opts(cfg, args)
    sim_cfg = _sim_config(cfg, args, model, pot, seed)
    if not sim_cfg.checkpoints:
        n_cp = 65
        cps = tuple(np.linspace(0.0, sim_cfg.horizon, n_cp)[1:])
        sim_cfg = SimConfig(model=model, potential=pot, horizon=sim_cfg.horizon,
                            x0=sim_cfg.x0, p0=sim_cfg.p0, p_hat0=sim_cfg.p_hat0,
                            checkpoints=cps, seed=seed, track=sim_cfg.track)
    traj = simulate(sim_cfg)
    cols = [traj.times] + [traj.rows[f] for f in TRAJECTORY_HEADER[1:]]
    path = os.path.join(out, "trajectory.csv")
    _write_csv(path, TRAJECTORY_HEADER, cols)
    _write_report(os.path.join(out, "trajectory.json"),
                  {"command": "simulate", "artifact": path,
                   "finals": traj.finals, "sups": traj.sups,
                   "config": _echo(model, pot, seed, workers,
                                   {"horizon": sim_cfg.horizon,
                                    "p0": sim_cfg.initial_p})})
    return 0


def cmd_ensemble(cfg, args):
    model = _model(cfg, args)
    pot = _potential(cfg, args)
    seed, workers, out = _run_opts(cfg, args)
    sim_cfg = _sim_config(cfg, args, model, pot, seed)
    n_paths = int(_get(cfg, "sim", "n_paths", getattr(args, "n_paths", None),
                       int, 256))
    ens = run_ensemble(sim_cfg, n_paths, workers=workers)
    payload = {"command": "ensemble", "n_paths": n_paths,
               "summary": ens.summary(),
               "config": _echo(model, pot, seed, workers,
                               {"horizon": sim_cfg.horizon})}
    _write_report(os.path.join(out, "ensemble.json"), payload)
    if args.dump_paths:
        _write_csv(os.path.join(out, "ensemble_finals.csv"),
                   list(ens.finals), [ens.finals[k] for k in ens.finals])
    return 0


def _grid_spec(cfg, args):
    kw = {}
    for key, cast in (("n_x", int), ("n_p", int), ("p_max", float),
                      ("samples_per_cell", int), ("low_row_boost", int)):
        val = _get(cfg, "grid", key, getattr(args, key, None), cast, None)
        if val is not None:
            kw[key] = cast(val)
    try:
        return GridSpec(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc))


def cmd_grid_build(cfg, args):
    model = _model(cfg, args)
    pot = _potential(cfg, args)
    seed, workers, out = _run_opts(cfg, args)
    spec = _grid_spec(cfg, args)
    gm = build_grid_chain(model, pot, spec, seed=seed).minorize()
    gdir = os.path.join(out, "grid")
    save_grid(gm, gdir)
    _write_report(os.path.join(out, "grid_build.json"),
                  {"command": "grid-build", "artifact": gdir,
                   "n_cells": gm.n_cells, "eps": gm.eps,
                   "leakage": gm.leakage,
                   "tv_vs_maxwell": gm.stationary_tv_vs_maxwell(),
                   "config": _echo(model, pot, seed, workers,
                                   {"grid": {"n_x": spec.n_x, "n_p": spec.n_p,
                                             "p_max": gm.p_max,
                                             "samples_per_cell":
                                             spec.samples_per_cell}})})
    return 0


def cmd_grid_check(cfg, args):
    seed, workers, out = _run_opts(cfg, args)
    gm = load_grid(args.grid_dir)
    failures = []
    row_dev = float(np.abs(gm.T.sum(axis=1) - 1.0).max())
    if row_dev > 1e-12:
        failures.append("row_stochastic")
    pi_resid = float(np.abs(gm.pi @ gm.T - gm.pi).sum())
    if pi_resid > 1e-12:
        failures.append("stationarity")
    minor_ok = bool((gm.T >= np.outer(gm.h, gm.nu) - 1e-15).all())
    if not minor_ok:
        failures.append("minorization")
    n_cycles = args.n_cycles
    stats = split_cycle_stats(gm, n_cycles, seed=seed + 1)
    exact = 1.0 / float(gm.pi @ gm.h)
    mc = float(stats["steps"].mean())
    se = float(stats["steps"].std(ddof=1) / np.sqrt(n_cycles))
    z = (mc - exact) / max(se, 1e-300)
    if abs(z) > 4.0:
        failures.append("cycle_length_identity")
    ergo = ergodicity_report(gm)
    if not (0 < ergo["slem"] < 1):
        failures.append("spectral_gap")
    payload = {"command": "grid-check", "row_sum_dev": row_dev,
               "pi_residual": pi_resid, "cycle_length": {
                   "exact": exact, "mc": mc, "se": se, "z": z},
               "ergodicity": ergo, "failures": failures,
               "config": {"grid_dir": args.grid_dir, "seed": seed,
                          "n_cycles": n_cycles}}
    _write_report(os.path.join(out, "grid_check.json"), payload)
    return 0 if not failures else 1


def cmd_limit_experiment(cfg, args):
    model = _model(cfg, args)
    pot = _potential(cfg, args)
    seed, workers, out = _run_opts(cfg, args)
    kind = _get(cfg, "experiment", "kind", args.kind, str, None)
    if kind is None:
        raise ConfigError("experiment kind required")
    lam_list = _get(cfg, "experiment", "lam_list", getattr(args, "lam_list", None),
                    _floats, None)
    if isinstance(lam_list, str):
        lam_list = _floats(lam_list)
    t_macro = float(_get(cfg, "experiment", "t_macro",
                         getattr(args, "t_macro", None), float, 1.0))
    n_paths = _get(cfg, "experiment", "n_paths", getattr(args, "n_paths", None),
                   int, None)
    p_hat0_list = _get(cfg, "experiment", "p_hat0_list",
                       getattr(args, "p_hat0_list", None), _floats, (0.0,))
    if isinstance(p_hat0_list, str):
        p_hat0_list = _floats(p_hat0_list)
    try:
        report = run_experiment(kind, lam_list=lam_list, T=t_macro,
                                n_paths=None if n_paths is None else int(n_paths),
                                seed=seed, workers=workers, potential=pot,
                                p_hat0_list=tuple(p_hat0_list))
    except ValueError as exc:
        raise ConfigError(str(exc))
    payload = json.loads(report.to_json())
    payload["command"] = "limit-experiment"
    payload["config"] = _echo(model, pot, seed, workers)
    payload["failures"] = [k for k, v in report.passes.items()
                           if not v["passed"]]
    _write_report(os.path.join(out, f"experiment_{kind}.json"), payload)
    return 0 if report.passed else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="torusgas",
        description="Tracer-in-gas simulator and verification suite.")
    parser.add_argument("--config", help="INI config file; flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--lam", type=float, help="gas/tracer mass ratio")
        p.add_argument("--shape", help="potential shape (cosine)")
        p.add_argument("--v0", type=float, help="potential amplitude")
        p.add_argument("--seed", type=int, help="master 64-bit seed")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("kernel-table", help="dump kernel functions to CSV "
                       f"(columns: {','.join(KERNEL_TABLE_HEADER)})")
    common(p)
    p.add_argument("--p-range", type=float, default=20.0)
    p.add_argument("--n-points", type=int, default=401)
    p.set_defaults(fn=cmd_kernel_table)

    p = sub.add_parser("sweep-inequalities",
                       help="run the fitted-constant bound sweeps (JSON report)")
    common(p)
    p.set_defaults(fn=cmd_sweep_inequalities)

    p = sub.add_parser("simulate", help="single trajectory to CSV "
                       f"(columns: {','.join(TRAJECTORY_HEADER)})")
    common(p)
    p.add_argument("--horizon", type=float)
    p.add_argument("--x0", type=float)
    p.add_argument("--p0", type=float)
    p.add_argument("--p-hat0", dest="p_hat0", type=float)
    p.add_argument("--checkpoints", type=_floats)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("ensemble", help="path ensemble summary to JSON")
    common(p)
    p.add_argument("--horizon", type=float)
    p.add_argument("--p-hat0", dest="p_hat0", type=float)
    p.add_argument("--n-paths", dest="n_paths", type=int)
    p.add_argument("--dump-paths", action="store_true",
                   help="also write per-path finals CSV")
    p.set_defaults(fn=cmd_ensemble)

    p = sub.add_parser("grid-build",
                       help="build and save the surrogate chain (CSV triplet)")
    common(p)
    p.add_argument("--n-x", dest="n_x", type=int)
    p.add_argument("--n-p", dest="n_p", type=int)
    p.add_argument("--p-max", dest="p_max", type=float)
    p.add_argument("--samples-per-cell", dest="samples_per_cell", type=int)
    p.add_argument("--low-row-boost", dest="low_row_boost", type=int)
    p.set_defaults(fn=cmd_grid_build)

    p = sub.add_parser("grid-check",
                       help="verify identities of a saved surrogate chain")
    common(p)
    p.add_argument("grid_dir")
    p.add_argument("--n-cycles", dest="n_cycles", type=int, default=20000)
    p.set_defaults(fn=cmd_grid_check)

    p = sub.add_parser("limit-experiment",
                       help="run a diffusive-limit experiment (JSON report)")
    common(p)
    p.add_argument("kind", nargs="?")
    p.add_argument("--lam-list", dest="lam_list", type=_floats)
    p.add_argument("--t-macro", dest="t_macro", type=float)
    p.add_argument("--n-paths", dest="n_paths", type=int)
    p.add_argument("--p-hat0-list", dest="p_hat0_list", type=_floats)
    p.set_defaults(fn=cmd_limit_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return args.fn(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
