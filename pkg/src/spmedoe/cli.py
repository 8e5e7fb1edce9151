"""Command-line front end.

Usage::

    spmedoe [--config FILE|PRESET] [--out DIR] SUBCOMMAND ...

    spmedoe simulate --profile cc --duration 1000 --rate 1
    spmedoe simulate --input runs/<id>/design_input.csv
    spmedoe design --horizon 1000 --M 4
    spmedoe estimate runs/<id>/trajectory.csv
    spmedoe campaign --method optimal-doe --n 10 --seed 0
    spmedoe validate --estimate runs/<id>/estimate.json
    spmedoe report runs/<id1> runs/<id2>

The config defaults to ``$SPMEDOE_CONFIG`` and then to the ``paper`` preset.
Every command writes into ``<out>/<config hash>-seed<seed>/`` and refreshes
``manifest.json`` there. Exit status: 0 success, 1 usage, 2 config,
3 numerical or model failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import (load_summary, read_columns, run_dir, sample_time, write_input_sequence,
                        write_manifest, write_record, write_summary)
from .campaign import (add_noise, cc_profile, experiment_seed, make_plant, multisine_profile,
                       multistep_profile, run_campaign, validate)
from .config import CONFIG_ENV, PARAMETER_NAMES, load_config, replace
from .design import DesignConstraints, design_full, design_suboptimal
from .errors import ConfigError, SpmeDoeError
from .estimation import ExperimentRecord, estimate
from .sensitivity import SpmeOutputModel
from .simulate import simulate, write_trajectory

log = logging.getLogger("spmedoe")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
DEFAULT_PRESET = "paper"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# helpers

def _load(args):
    path = args.config or os.environ.get(CONFIG_ENV) or DEFAULT_PRESET
    cfg = load_config(path)
    changes = {}
    if getattr(args, "plant", None):
        changes["campaign__plant"] = args.plant
    if getattr(args, "seed", None) is not None:
        changes["campaign__rng_seed"] = args.seed
    if getattr(args, "t_s", None) is not None:
        changes["campaign__t_s"] = args.t_s
    return replace(cfg, **changes) if changes else cfg


def _dir(args, cfg):
    return run_dir(args.out, cfg, cfg.campaign.rng_seed)


def _finish(args, cfg, directory, started):
    write_manifest(directory, cfg, args.command, cfg.campaign.rng_seed, started, args.argv)
    print(directory)


def _scaled_params(args, cfg):
    if getattr(args, "scaled", None):
        return np.asarray(args.scaled, dtype=float)
    if getattr(args, "params", "true") == "initial":
        return cfg.phi_init.as_array() / cfg.phi_true.as_array()
    return np.ones(len(PARAMETER_NAMES))


def _read_inputs(path, default_t_s):
    try:
        cols = read_columns(path)
        if "current_A" not in cols:
            raise ValueError(f"{path}: needs a current_A column")
        t_s = sample_time(cols["time_s"], default_t_s) if "time_s" in cols else default_t_s
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return cols["current_A"], t_s


def _profile(args, cfg, t_s):
    I1c = cfg.cell.one_c_current
    if args.profile == "rest":
        return np.zeros(int(round(args.duration / t_s)))
    if args.profile == "cc":
        return cc_profile(args.duration, args.rate, I1c, t_s)
    if args.profile == "multistep":
        return multistep_profile(I1c, t_s, rate=args.rate)
    return multisine_profile(args.duration, I1c, t_s)


def _estimate_vector(path):
    """Scaled estimate from an ``estimate.json`` or a campaign ``summary.json``
    (last successful experiment)."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    if "scaled" in data:
        return np.asarray(data["scaled"], dtype=float)
    ok = [e for e in data.get("experiments", []) if not e.get("failed")]
    if not ok:
        raise UsageError(f"{path}: no estimate found")
    return np.asarray(ok[-1]["estimate"], dtype=float)


# --------------------------------------------------------------------------
# subcommands

def cmd_simulate(args):
    cfg = _load(args)
    started = time.time()
    t_s = cfg.campaign.t_s
    if args.input:
        u, t_s = _read_inputs(args.input, t_s)
    else:
        u = _profile(args, cfg, t_s)
    if t_s != cfg.campaign.t_s:
        cfg = replace(cfg, campaign__t_s=t_s)
    directory = _dir(args, cfg)
    if args.input:
        shutil.copyfile(args.input, directory / "input.csv")
    out = directory / "trajectory.csv"
    if cfg.campaign.plant == "p2d":
        plant = make_plant(cfg)
        plant.check_window = False
        y = plant.run_from_initial(u)
    else:
        phi = _scaled_params(args, cfg)
        params = cfg.phi_true.from_array(phi * cfg.phi_true.as_array())
        traj = simulate(cfg.x0.as_array(), u, params, cfg.cell, t_s, cfg.integrator)
        y = traj.outputs
    if args.noise:
        y = add_noise(y, cfg.campaign.sigma_y2, experiment_seed(cfg.campaign.rng_seed, 0))
    if cfg.campaign.plant == "spme" and not args.noise:
        write_trajectory(out, traj, cfg.cell, include_states=args.states)
    else:
        write_record(out, u, y, t_s, cfg)
    _finish(args, cfg, directory, started)
    return EXIT_OK


def cmd_design(args):
    cfg = _load(args)
    started = time.time()
    d, c = cfg.design, cfg.campaign
    horizon = args.horizon if args.horizon is not None else c.experiment_duration
    M = 1 if args.full else (args.M if args.M is not None else c.M)
    phi = _estimate_vector(args.estimate) if args.estimate else \
        cfg.phi_init.as_array() / cfg.phi_true.as_array()
    cons = DesignConstraints(d.i_max_c * cfg.cell.one_c_current, d.v_min, d.v_max, horizon, c.t_s, M)
    model = SpmeOutputModel(cfg.cell, cfg.phi_true, c.t_s, cfg.integrator)
    x0 = cfg.x0.as_array()
    if args.full:
        res = design_full(model, phi, x0, cons, c.sigma_y2, options=d)
    else:
        res = design_suboptimal(model, phi, x0, cons, c.sigma_y2, options=d)
    directory = _dir(args, cfg)
    write_input_sequence(directory / "design_input.csv", res.inputs, c.t_s)
    info = {"horizon_s": horizon, "blocks": M, "scaled_estimate": phi.tolist(),
            "predicted_trace": res.predicted_trace, "solve_time_s": res.solve_time,
            "converged": res.converged, "feasible": res.feasible,
            "v_min_V": float(np.min(res.outputs)), "v_max_V": float(np.max(res.outputs))}
    (directory / "design.json").write_text(json.dumps(info, indent=2))
    log.info("design: trace %.4g in %.2f s", res.predicted_trace, res.solve_time)
    _finish(args, cfg, directory, started)
    return EXIT_OK


def cmd_estimate(args):
    cfg = _load(args)
    started = time.time()
    records, t_s = [], None
    for path in args.records:
        try:
            cols = read_columns(path)
            u, y = cols["current_A"], cols["voltage_V"]
            ts = sample_time(cols["time_s"], cfg.campaign.t_s)
        except KeyError as exc:
            raise UsageError(f"{path}: missing column {exc}") from None
        except (OSError, ValueError) as exc:
            raise UsageError(str(exc)) from None
        if t_s is not None and abs(ts - t_s) > 1e-12:
            raise UsageError("all records must share one sampling time")
        t_s = ts
        records.append(ExperimentRecord(u, y, cfg.x0.as_array(), ts, label=Path(path).name))
    cfg = replace(cfg, campaign__t_s=t_s)
    model = SpmeOutputModel(cfg.cell, cfg.phi_true, t_s, cfg.integrator)
    start = _scaled_params(args, cfg)
    res = estimate(records, model, start, options=cfg.estimation)
    raw = res.estimate.unscale().as_array()
    directory = _dir(args, cfg)
    out = {"parameters": list(PARAMETER_NAMES), "scaled": res.values.tolist(), "raw": raw.tolist(),
           "start_scaled": start.tolist(), "cost_V2": res.cost, "initial_cost_V2": res.initial_cost,
           "converged": res.converged, "evaluations": res.iterations, "message": res.message,
           "record_rms_V": res.record_rms, "records": [r.label for r in records]}
    (directory / "estimate.json").write_text(json.dumps(out, indent=2))
    for name, s, r in zip(PARAMETER_NAMES, res.values, raw):
        print(f"{name:7s} scaled {s:.6g}  raw {r:.6g}")
    _finish(args, cfg, directory, started)
    return EXIT_OK


def cmd_campaign(args):
    changes = {}
    for key, attr in (("method", "method"), ("n_experiments", "n"), ("sigma_y2", "sigma2"),
                      ("experiment_duration", "duration"), ("M", "M")):
        if getattr(args, attr) is not None:
            changes["campaign__" + key] = getattr(args, attr)
    cfg = _load(args)
    cfg = replace(cfg, **changes) if changes else cfg
    started = time.time()

    def progress(s):
        print(f"experiment {s.index}: distance {s.distance:.4g}  trace {s.trace:.4g}  "
              f"kappa {s.kappa:.4g}", file=sys.stderr)

    result = run_campaign(cfg, progress=progress)
    directory = _dir(args, cfg)
    rec = directory / "records"
    rec.mkdir(exist_ok=True)
    for old in rec.glob("experiment_*.csv"):
        old.unlink()
    for i, (u, y) in enumerate(zip(result.applied_inputs, result.measured_outputs)):
        write_record(rec / f"experiment_{i + 1:02d}.csv", u[:y.size], y, cfg.campaign.t_s, cfg)
    write_summary(directory, result.summary())
    (directory / "timings.json").write_text(json.dumps(result.timings(), indent=2))
    _finish(args, cfg, directory, started)
    return EXIT_OK


def cmd_validate(args):
    cfg = _load(args)
    started = time.time()
    phi = np.asarray(args.scaled, dtype=float) if args.scaled else \
        (_estimate_vector(args.estimate) if args.estimate else np.ones(len(PARAMETER_NAMES)))
    c = cfg.campaign
    duration = args.duration if args.duration is not None else c.validation_duration
    u = multisine_profile(duration, cfg.cell.one_c_current, c.t_s)
    plant = make_plant(cfg)
    rms = validate(phi, plant, u, cfg)
    directory = _dir(args, cfg)
    (directory / "validate.json").write_text(json.dumps(
        {"plant": c.plant, "scaled": phi.tolist(), "duration_s": duration, "rms_V": rms}, indent=2))
    print(f"validation RMS: {rms * 1e3:.4f} mV")
    _finish(args, cfg, directory, started)
    return EXIT_OK


def cmd_report(args):
    from .config import load_config as _lc
    from .report import render
    dirs = [Path(d) for d in args.runs]
    for d in dirs:
        if not (d / "summary.json").is_file():
            raise UsageError(f"{d}: not a campaign run directory (no summary.json)")
    started = time.time()
    out = Path(args.output) if args.output else dirs[0] / "report"
    for f in render(dirs, out):
        print(f)
    # refresh the owning run's manifest when the report lands inside it
    owner = next((d for d in dirs if out.resolve().is_relative_to(d.resolve())), None)
    if owner is not None and (owner / "config.toml").is_file():
        cfg = _lc(str(owner / "config.toml"))
        write_manifest(owner, cfg, "report", load_summary(owner)["seed"], started, args.argv)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spmedoe", description="SPMe simulation, experiment design and identification.")
    p.add_argument("--config", help=f"TOML config or preset name (default ${CONFIG_ENV}, then '{DEFAULT_PRESET}')")
    p.add_argument("--out", default="runs", help="base directory for run directories (default: runs)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, plant=True):
        if plant:
            sp.add_argument("--plant", choices=["spme", "p2d"])
        sp.add_argument("--seed", type=int, help="master seed (default: campaign.rng_seed)")

    s = sub.add_parser("simulate", help="simulate one trajectory from the initial state")
    common(s)
    src = s.add_mutually_exclusive_group()
    src.add_argument("--input", help="input sequence file (time_s,current_A)")
    src.add_argument("--profile", choices=["rest", "cc", "multistep", "multisine"], default="rest")
    s.add_argument("--duration", type=float, default=1000.0, help="[s] (rest, cc, multisine)")
    s.add_argument("--rate", type=float, default=1.0, help="C-rate for cc/multistep")
    s.add_argument("--t-s", dest="t_s", type=float, help="sampling time [s]")
    s.add_argument("--params", choices=["true", "initial"], default="true")
    s.add_argument("--scaled", type=float, nargs=len(PARAMETER_NAMES), metavar="V",
                   help="scaled parameters " + " ".join(PARAMETER_NAMES))
    s.add_argument("--noise", action="store_true", help="add measurement noise (campaign.sigma_y2)")
    s.add_argument("--states", action="store_true", help="also write the SPMe state columns")
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("design", help="design an input sequence at an estimate")
    common(d, plant=False)
    d.add_argument("--horizon", type=float, help="[s] (default campaign.experiment_duration)")
    d.add_argument("--M", type=int, help="number of sequential blocks")
    d.add_argument("--full", action="store_true", help="optimise the whole horizon at once")
    d.add_argument("--estimate", help="estimate.json or summary.json to design around")
    d.set_defaults(func=cmd_design, t_s=None)

    e = sub.add_parser("estimate", help="fit parameters to record files")
    common(e, plant=False)
    e.add_argument("records", nargs="+", help="files with time_s,current_A,voltage_V columns")
    e.add_argument("--params", choices=["true", "initial"], default="initial", help="starting point")
    e.add_argument("--scaled", type=float, nargs=len(PARAMETER_NAMES), metavar="V", help="scaled start")
    e.set_defaults(func=cmd_estimate, t_s=None)

    c = sub.add_parser("campaign", help="run an identification campaign")
    common(c)
    c.add_argument("--method", choices=["optimal-doe", "cc-discharge", "multistep"])
    c.add_argument("--n", type=int, help="number of experiments")
    c.add_argument("--sigma2", type=float, help="measurement noise variance [V^2]")
    c.add_argument("--duration", type=float, help="experiment length [s]")
    c.add_argument("--M", type=int, help="design blocks per experiment")
    c.set_defaults(func=cmd_campaign, t_s=None)

    v = sub.add_parser("validate", help="RMS error of the SPMe against the plant on a multisine")
    common(v)
    g = v.add_mutually_exclusive_group()
    g.add_argument("--estimate", help="estimate.json or summary.json")
    g.add_argument("--scaled", type=float, nargs=len(PARAMETER_NAMES), metavar="V")
    v.add_argument("--duration", type=float, help="[s] (default campaign.validation_duration)")
    v.set_defaults(func=cmd_validate, t_s=None)

    r = sub.add_parser("report", help="SVG charts and tables from campaign run directories")
    r.add_argument("runs", nargs="+")
    r.add_argument("--output", help="output directory (default <first run>/report)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"spmedoe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        where = f" in {exc.path}" if exc.path else ""
        print(f"spmedoe: configuration error{where}:", file=sys.stderr)
        for issue in exc.issues:
            print(f"  {issue}", file=sys.stderr)
        return EXIT_CONFIG
    except SpmeDoeError as exc:
        print(f"spmedoe: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
