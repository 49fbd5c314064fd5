"""Command-line front end: ``lorentz-mc <subcommand> --config run.json``.

Exit codes: 0 success, 2 configuration or usage error, 3 numeric or data failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import fullmodel
from .chain import run_chain
from .config import RunConfig, load_config
from .errors import (ConfigError, EstimationError, InsufficientDataError, NumericError,
                     UnsupportedParameterError)
from .estimators import run_estimation
from .fclt import MIN_REPLICAS, fclt_suite, horizon_for
from .rng import RngStream
from .trajectory import TrajectoryPath, position_at_time

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def write_json(path: Path, obj) -> None:
    # allow_nan=False: every report field must be finite (inf/nan fail loudly)
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(cfg: RunConfig, args) -> dict:
    params = cfg.params
    path = run_chain(cfg.v0, cfg.run.n_steps, params, RngStream(cfg.seed, 0))
    traj = TrajectoryPath.from_chain(path)
    out = _outdir(cfg)
    X = traj.X_at_collisions
    write_csv(out / "trajectory.csv",
              ["n", "tau", "t", "V1", "V2", "V3", "w1", "w2", "w3", "X1", "X2", "X3"],
              ([k + 1, path.tau[k], path.t[k + 1], *path.V[k + 1], *path.w[k], *X[k + 1]]
               for k in range(len(path))))
    times = np.linspace(0.0, traj.horizon, cfg.run.grid_points)
    Xt = position_at_time(traj, times)
    write_csv(out / "positions.csv", ["t", "X1", "X2", "X3"],
              ([times[i], *Xt[i]] for i in range(times.size)))
    # the output location is not part of the result
    echo = cfg.to_dict()
    echo.pop("output_dir")
    summary = {
        "schema_version": SCHEMA_VERSION,
        "config": echo,
        "n_steps": cfg.run.n_steps,
        "n_records": len(path),
        "t_final": float(path.t[-1]),
        "X_final": [float(x) for x in X[-1]],
        "t_monotone": bool(np.all(np.diff(path.t) > 0)),
        "files": ["trajectory.csv", "positions.csv"],
    }
    write_json(out / "summary.json", summary)
    return summary


def cmd_constants(cfg: RunConfig, args) -> dict:
    run = cfg.run
    report, stats = run_estimation(cfg.params, cfg.v0, run.n_steps, cfg.seed,
                                   burn_in=run.burn_in, n_batches=run.n_batches,
                                   threads=args.threads, return_stats=True)
    out = _outdir(cfg)
    d = report.to_dict()
    write_json(out / "constants.json", d)
    write_csv(out / "batches.csv", ["batch", "count", "f1", "f2", "f3", "h3", "tau"],
              ([j, int(stats.count[j]), *stats.f[j], stats.h3[j], stats.tau[j]]
               for j in range(stats.count.size)))
    return d


def _load_constants(path) -> dict:
    if path is None:
        raise UsageError("fclt needs --constants FILE (output of the constants subcommand)")
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return {k: d[k] for k in ("c1", "c2", "c3", "c4")}
    except OSError as exc:
        raise UsageError(f"cannot read constants file {path}: {exc.strerror}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"constants file {path} is not a constants report") from exc


def cmd_fclt(cfg: RunConfig, args) -> dict:
    const = _load_constants(args.constants)
    M = cfg.run.n_replicas
    if M < MIN_REPLICAS:
        raise UsageError(f"run.n_replicas = {M} is below the minimum of {MIN_REPLICAS} "
                         "replicas needed for the normality and correlation tests")
    c1, c2, c3, c4 = (const[k]["value"] for k in ("c1", "c2", "c3", "c4"))
    T = cfg.run.horizon_T if cfg.run.horizon_T is not None else horizon_for(c4)
    grid = np.linspace(0.0, 1.0, cfg.run.grid_points)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report, Y = fclt_suite(cfg.params, c1, c2, c3, M, T, grid, cfg.seed, v0=cfg.v0,
                               c1_stderr=const["c1"]["stderr"],
                               p_threshold=cfg.tolerances.p_threshold,
                               threads=args.threads, return_Y=True)
    out = _outdir(cfg)
    d = report.to_dict()
    write_json(out / "fclt.json", d)
    write_csv(out / "replicas.csv", ["replica", "s", "Y1", "Y2", "Y3"],
              ([m, grid[k], *Y[m, k]] for m in range(M) for k in range(grid.size)))
    return d


def _survival_rows(v0, params, sample, n_points=101):
    tau = np.sort(sample.tau0)
    n = tau.size
    finite = tau[np.isfinite(tau)]
    t_max = float(np.quantile(finite, 0.999)) if finite.size else 0.0
    ts = np.linspace(0.0, t_max, n_points)
    emp = 1.0 - np.searchsorted(tau, ts, side="right") / n
    model = np.exp(-fullmodel.arc_lengths(v0, params, ts) / params.lam)
    return ([ts[i], emp[i], model[i]] for i in range(n_points))


def cmd_validate_full(cfg: RunConfig, args) -> dict:
    params = cfg.params
    n_fields = args.fields if args.fields is not None else cfg.run.n_replicas
    t_vol = cfg.run.horizon_T if cfg.run.horizon_T is not None else 1.0
    report, sample = fullmodel.validate_full_model(cfg.v0, params, n_fields, cfg.seed,
                                                   volume_t=t_vol, volume_samples=args.samples,
                                                   threads=args.threads)
    report["schema_version"] = SCHEMA_VERSION
    report["v0"] = [float(x) for x in cfg.v0]
    out = _outdir(cfg)
    write_json(out / "validation.json", report)
    write_csv(out / "survival.csv", ["t", "empirical", "model"],
              _survival_rows(cfg.v0, params, sample))
    return report


def cmd_tube_volume(cfg: RunConfig, args) -> dict:
    params = cfg.params
    t = args.t if args.t is not None else (cfg.run.horizon_T or 1.0)
    vol, se = fullmodel.tube_volume_mc(cfg.v0, params, t, args.samples,
                                       RngStream(cfg.seed, fullmodel.TUBE_STREAM))
    formula = fullmodel.tube_volume_formula(cfg.v0, params, t)
    d = {"schema_version": SCHEMA_VERSION, "v0": [float(x) for x in cfg.v0], "t": t,
         "samples": args.samples, "estimate": vol, "stderr": se, "formula": formula,
         "z": (vol - formula) / se if se > 0 else 0.0,
         "in_condition_violated": not fullmodel.in_condition(cfg.v0, params)}
    write_json(_outdir(cfg) / "tube_volume.json", d)
    return d


COMMANDS = {
    "simulate": cmd_simulate,
    "constants": cmd_constants,
    "fclt": cmd_fclt,
    "validate-full": cmd_validate_full,
    "tube-volume": cmd_tube_volume,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (defaults apply if omitted)")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--n-steps", type=int, help="override run.n_steps")
    common.add_argument("--out", help="override output_dir")
    common.add_argument("--threads", type=int, default=None,
                        help="worker cap (falls back to $LORENTZ_THREADS, then 1)")

    p = _Parser(prog="lorentz-mc", description="Inelastic Lorentz gas Monte Carlo")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="store one chain run as CSV")
    sub.add_parser("constants", parents=[common], help="estimate c1..c4 and K")
    f = sub.add_parser("fclt", parents=[common], help="replica tests of the Brownian limit")
    f.add_argument("--constants", help="constants.json from the constants subcommand")
    v = sub.add_parser("validate-full", parents=[common], help="obstacle-field validation")
    v.add_argument("--fields", type=int, help="number of obstacle fields (default run.n_replicas)")
    v.add_argument("--samples", type=int, default=1_000_000, help="tube-volume MC samples")
    t = sub.add_parser("tube-volume", parents=[common], help="MC volume of the swept tube")
    t.add_argument("--t", type=float, help="sweep time (default run.horizon_T or 1)")
    t.add_argument("--samples", type=int, default=1_000_000)
    return p


def _threads(arg) -> int:
    if arg is None:
        env = os.environ.get("LORENTZ_THREADS")
        if env is None:
            return 1
        try:
            arg = int(env)
        except ValueError:
            raise UsageError(f"LORENTZ_THREADS must be an integer, got {env!r}") from None
    if arg < 1:
        raise UsageError("thread count must be positive")
    return arg


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.threads = _threads(args.threads)
        for name in ("fields", "samples"):
            if getattr(args, name, None) is not None and getattr(args, name) < 1:
                raise UsageError(f"--{name} must be positive")
        if getattr(args, "t", None) is not None and not (math.isfinite(args.t) and args.t >= 0):
            raise UsageError("--t must be a nonnegative number")
        cfg = load_config(args.config) if args.config else RunConfig().validated()
        cfg = cfg.with_overrides(args.seed, args.n_steps, args.out)
        COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError, UnsupportedParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, InsufficientDataError, EstimationError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
