"""Command-line front end: ``suffstats``, ``solve``, ``experiment <name>`` and ``validate``.

Exit codes
----------
0
    success
2
    invalid input (bad flag, malformed calibration or scenario, unknown experiment)
3
    missing or unreadable files
4
    the solver failed (indeterminate system or no convergence)

Machine-readable output goes to files under ``--out`` or, for
``suffstats`` and ``validate`` without ``--out``, to standard output.
Log messages go to standard error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_SOLVER = 4

THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
DEFAULT_CALIBRATION = "euroarea6"
DEFAULT_SCENARIO = "baseline"

log = logging.getLogger("hankwedge")


class UsageError(ValueError):
    """A command-line value could not be interpreted."""


def _set_threads(n: int) -> None:
    # BLAS reads these when it is first loaded, so they only take effect if
    # numpy has not been imported yet in this process.
    for name in THREAD_VARIABLES:
        os.environ[name] = str(n)


def parse_dp(text: str) -> dict:
    """Parse ``e=0.40,d=0.0`` into item price changes; unnamed items are zero."""
    out = {"e": 0.0, "d": 0.0, "s": 0.0}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep or key not in out:
            raise UsageError(f"malformed --dp entry {part!r}; expected item=value with item in e, d, s")
        try:
            out[key] = float(value)
        except ValueError:
            raise UsageError(f"malformed --dp value {value!r} for item {key}") from None
    return out


def parse_overrides(items: list[str] | None) -> dict:
    """Parse repeated ``--set key=value`` flags into a dict of floats."""
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"malformed --set {item!r}; expected key=value")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise UsageError(f"malformed --set value {value!r} for {key}") from None
    return out


def resolve_calibration(name: str) -> Path:
    """An existing directory, or the name of a bundled calibration."""
    from .calibration import bundled_path

    path = Path(name)
    if path.is_dir():
        return path
    try:
        return bundled_path(name)
    except (FileNotFoundError, KeyError, ValueError):
        raise FileNotFoundError(f"calibration directory not found: {name}") from None


def resolve_scenario(name: str) -> Path:
    """An existing file, or the name of a bundled scenario."""
    from .calibration import bundled_path

    path = Path(name)
    if path.is_file():
        return path
    candidate = bundled_path("scenarios") / f"{name}.json"
    if candidate.is_file():
        return candidate
    raise FileNotFoundError(f"scenario file not found: {name}")


def _load(args):
    from .calibration import CommonParams, load_union

    countries, common = load_union(resolve_calibration(args.calib))
    overrides = parse_overrides(getattr(args, "set", None))
    if getattr(args, "T", None):
        overrides["horizon_T"] = args.T
    if overrides:
        known = {f.name: f.type for f in fields(CommonParams)}
        unknown = sorted(set(overrides) - set(known))
        if unknown:
            raise UsageError(f"unknown parameter(s) {unknown}; valid: {sorted(known)}")
        cast = {k: int(v) if isinstance(getattr(common, k), int) else v for k, v in overrides.items()}
        common = replace(common, **cast)
        common.validate()
    return countries, common


def _scenario(args, common):
    from .calibration import load_scenario

    scenario = load_scenario(resolve_scenario(args.scenario), common)
    if args.nonlinear is not None:
        scenario = replace(scenario, nonlinear=args.nonlinear)
    return scenario


def _options(args):
    from .solver import SolverOptions

    kw = {}
    if args.tol is not None:
        kw["tol"] = args.tol
    if args.max_iter is not None:
        kw["max_iter"] = args.max_iter
    if kw:
        options = SolverOptions(**kw)
        options.validate()
        return options
    return None


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_suffstats(args) -> int:
    from .suffstats import suffstats_rows

    dp = parse_dp(args.dp)
    countries, common = _load(args)
    lambda_e = common.lambda_e if args.lambda_e is None else args.lambda_e
    rows = suffstats_rows(countries, dp, lambda_e)
    cols = ["country", "rwei", "avg_pi", "omega", "mwsi", "tau_star"]
    if args.format == "json":
        text = json.dumps(rows, indent=1) + "\n"
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] if k == "country" else repr(float(r[k])) for k in cols})
        text = buf.getvalue()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"suffstats.{args.format}").write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_solve(args) -> int:
    from .experiments import directory_digest, scenario_digest, update_manifest
    from .solver import solve

    countries, common = _load(args)
    scenario = _scenario(args, common)
    result = solve(countries, common, scenario, _options(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"transition.{args.format}"
    if args.format == "json":
        result.to_json(path)
    else:
        result.to_csv(path)
    update_manifest(out, "solve", {
        "calibration": args.calib,
        "calibration_hash": directory_digest(resolve_calibration(args.calib)),
        "scenario_hash": scenario_digest(scenario),
        "output": path.name,
        "output_hash": _file_digest(path),
        "nonlinear": scenario.nonlinear,
        "iterations": result.iterations,
        "residual_norm": result.residual_norm,
    })
    log.info("solve: %s, %d iterations, residual %.3g", "nonlinear" if scenario.nonlinear else "linear",
             result.iterations, result.residual_norm)
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .experiments import EXPERIMENTS, run_experiment

    if args.name not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.name!r}; valid names: {', '.join(EXPERIMENTS)}")
    calib = str(resolve_calibration(args.calib)) if args.calib else None
    scenario = None
    if args.scenario:
        from .calibration import load_union

        _, common = load_union(calib) if calib else load_union(resolve_calibration(DEFAULT_CALIBRATION))
        scenario = _scenario(args, common)
    run_experiment(args.name, args.out, calib, scenario, _options(args))
    return EXIT_OK


def cmd_validate(args) -> int:
    from .calibration import union_weights

    countries, common = _load(args)
    weights = union_weights(countries)
    report = {
        "calibration": args.calib,
        "horizon_T": common.horizon_T,
        "countries": [{"country": c.code, "groups": len(c.groups), "gdp_weight": float(w)}
                      for c, w in zip(countries, weights)],
    }
    if args.scenario:
        scenario = _scenario(args, common)
        report["scenario"] = {"T": scenario.T, "nonlinear": scenario.nonlinear}
    text = json.dumps(report, indent=1) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "validate.json").write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--calib", default=None,
                        help=f"calibration directory or bundled name (default: {DEFAULT_CALIBRATION})")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a common parameter, e.g. --set b_catchup=0 (repeatable)")
    common.add_argument("--T", type=int, default=None, help="horizon in quarters")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="output format")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1, reproducible)")
    common.add_argument("--log-level", choices=tuple(LOG_LEVELS), default="warn", help="stderr log level")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--scenario", default=None,
                        help=f"scenario JSON file or bundled name (default: {DEFAULT_SCENARIO})")
    mode = solver.add_mutually_exclusive_group()
    mode.add_argument("--nonlinear", dest="nonlinear", action="store_true", default=None,
                      help="force the nonlinear transition")
    mode.add_argument("--linear", dest="nonlinear", action="store_false", help="force the linear transition")
    solver.add_argument("--tol", type=float, default=None, help="nonlinear residual tolerance")
    solver.add_argument("--max-iter", type=int, default=None, help="nonlinear iteration cap")

    parser = argparse.ArgumentParser(
        prog="hankwedge",
        description="Reset-heterogeneity sufficient statistics and sequence-space transitions.",
        epilog="exit codes: 0 ok, 2 invalid input, 3 missing files, 4 solver failure; "
               "HANKWEDGE_CACHE sets the household Jacobian cache directory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("suffstats", parents=[common], help="sufficient statistics for a price change")
    p.add_argument("--dp", required=True, help="item price changes, e.g. e=0.40,d=0.02,s=0.01")
    p.add_argument("--lambda-e", type=float, default=None, help="essentials salience (default: calibration)")
    p.set_defaults(func=cmd_suffstats)

    p = sub.add_parser("solve", parents=[common, solver], help="solve a transition path")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("experiment", parents=[common, solver], help="run a named experiment")
    p.add_argument("name", help="experiment name")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("validate", parents=[common, solver], help="load and check a calibration")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=LOG_LEVELS[args.log_level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    _set_threads(args.threads)
    if args.command in ("solve", "experiment") and args.out is None:
        args.out = "."
    if args.command != "experiment" and args.calib is None:
        args.calib = DEFAULT_CALIBRATION
    if args.command == "solve" and args.scenario is None:
        args.scenario = DEFAULT_SCENARIO

    from .calibration import CalibrationError
    from .household import ConvergenceError
    from .solver import SolverError

    try:
        return args.func(args)
    except SolverError as exc:
        res = "n/a" if exc.residual is None else f"{exc.residual:.6g}"
        log.error("solver failed: %s (final residual norm %s)", exc, res)
        return EXIT_SOLVER
    except ConvergenceError as exc:
        log.error("household block failed: %s", exc)
        return EXIT_SOLVER
    except (UsageError, CalibrationError, KeyError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
