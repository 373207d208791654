"""Command line front end: every subcommand is a one-task experiment."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import ConfigError
from .runner import ExperimentConfig, run_experiment

SUBCOMMANDS = {
    "dispersion": "dispersion",
    "check": "check",
    "evolve": "evolve",
    "covariance": "covariance",
    "limit-cov": "limit_covariance",
    "current": "current",
    "second-law": "second_law",
    "clt": "clt",
    "decay": "decay",
}


# (d = 1, d >= 2) grid sizes that keep the default times inside the horizon
DEFAULT_GRID = {
    "covariance": (256, 64),
    "current": (256, 64),
    "second_law": (1024, 128),
    "clt": (256, 64),
    "decay": (2048, 512),
}


def _defaults(task: str, d: int) -> dict:
    """Reasonable stand-alone settings for a subcommand without a config file."""
    cfg: dict = {"observables": [task]}
    if task in ("current", "second_law", "covariance", "limit_covariance"):
        cfg["temperatures"] = {"T_plus": 2.0, "T_minus": 1.0}
        cfg["times"] = [0.0, 20.0, 40.0] if task != "second_law" else [40.0]
    elif task == "evolve":
        cfg["density"] = {"type": "triangular", "N0": 3}
        cfg["times"] = [0.0, 10.0]
    elif task == "clt":
        cfg["density"] = {"type": "triangular", "N0": 2}
        cfg["clip"] = 1.0
        cfg["times"] = [0.0, 60.0]
        pts = [{"x": [0] * (d - 1) + [1], "component": 0, "value": 1.0},
               {"x": [0] * (d - 1) + [-1], "component": 0, "value": -1.0}]
        cfg["test_function"] = {"points": pts}
    elif task == "decay":
        cfg["test_function"] = {"theta0": [2.16] if d == 1 else [0.44, 2.16], "width": 0.95, "profile": "smooth"}
        cfg["times"] = [100.0, 200.0, 400.0, 800.0] if d == 1 else [40.0, 80.0, 120.0, 160.0]
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phononflux", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", type=int, metavar="N", help="torus side length (even)")
    common.add_argument("--seed", type=int, metavar="S", help="master seed")
    common.add_argument("--trials", type=int, metavar="M", help="ensemble size")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, metavar="K", help="worker threads (default: PHONONFLUX_THREADS or all cores)")
    common.add_argument("--times", type=float, nargs="+", metavar="T", help="evaluation times")
    common.add_argument("--assert", dest="assert_", action="store_true", help="exit 4 when an acceptance check fails")
    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--config", metavar="FILE", help="base JSON config (flags override it)")
    model.add_argument("--dim", type=int, default=1, help="dimension of the elastic lattice")
    model.add_argument("--mass", type=float, default=1.0, help="mass m of the elastic lattice")
    model.add_argument("--model", metavar="FILE", help="JSON interaction matrix instead of the elastic lattice")
    model.add_argument("--t-plus", type=float, help="temperature of the x_d >= 0 half")
    model.add_argument("--t-minus", type=float, help="temperature of the x_d < 0 half")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common, model], help=f"run the {name} task")
    run = sub.add_parser("run", parents=[common], help="run a JSON experiment config")
    run.add_argument("config", help="path to the config file")
    return p


def _read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _config_from_args(args) -> dict:
    if args.command == "run":
        with open(args.config) as fh:
            raw = json.load(fh)
    else:
        task = SUBCOMMANDS[args.command]
        if args.config:
            with open(args.config) as fh:
                raw = json.load(fh)
            raw["observables"] = [task]
        else:
            d = _read_json(args.model).get("d", args.dim) if args.model else args.dim
            raw = _defaults(task, int(d))
            raw["grid"] = {"N": DEFAULT_GRID.get(task, (64, 32))[0 if int(d) == 1 else 1]}
        if args.model:
            with open(args.model) as fh:
                raw["model"] = json.load(fh)
        elif "model" not in raw:
            raw["model"] = {"type": "elastic", "d": args.dim, "m": args.mass}
        if args.t_plus is not None or args.t_minus is not None:
            T = dict(raw.get("temperatures", {}))
            if args.t_plus is not None:
                T["T_plus"] = args.t_plus
            if args.t_minus is not None:
                T["T_minus"] = args.t_minus
            raw["temperatures"] = T
    if args.grid is not None:
        raw["grid"] = {"N": args.grid}
    if args.seed is not None or args.trials is not None:
        ens = dict(raw.get("ensemble", {}))
        if args.seed is not None:
            ens["master_seed"] = args.seed
        if args.trials is not None:
            ens["M"] = args.trials
        raw["ensemble"] = ens
    if args.out is not None:
        raw.setdefault("output", {})["dir"] = args.out
    if args.threads is not None:
        raw["threads"] = args.threads
    if args.times is not None:
        raw["times"] = args.times
    return raw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is None and os.environ.get("PHONONFLUX_THREADS"):
        args.threads = int(os.environ["PHONONFLUX_THREADS"])
    try:
        raw = _config_from_args(args)
        cfg = ExperimentConfig.from_dict(raw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    result = run_experiment(cfg)
    for err in result.errors:
        print(f"{err['task']}: {err['kind']} error: {err['message']}", file=sys.stderr)
    for fail in result.failures:
        print(f"FAIL {fail}", file=sys.stderr)
    print(f"wrote {Path(cfg.out_dir) / 'manifest.json'}")
    code = result.exit_code
    if code == 4 and not args.assert_:
        return 0
    return code


if __name__ == "__main__":
    sys.exit(main())
