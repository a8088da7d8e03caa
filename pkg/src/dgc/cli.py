"""Command-line entry point.

Four subcommands cover the library's surface: ``simulate`` writes the
columnar path dump, ``intensity`` evaluates every intensity, drift and the
party-survival probability at a user-supplied state, ``verify`` runs the
statistical test suites and ``tva`` runs the counterparty adjustment sweep.

Exit codes: 0 success, 1 a verification check failed, 2 bad configuration
or arguments, 3 a numerical failure (non-convergence or a non-finite
estimate).  All file outputs serialize floats with ``repr`` and fix their
row order, so equal inputs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .batch import write_path_dump
from .engine import (Scope, azema_supermartingale, factor_drift,
                     factor_drift_reduction, intensity, intensity_reduction)
from .errors import ConfigError, DegenerateHazard, NonConvergence
from .model import ModelConfig, default_config, load_config, load_state
from .simulate import GridSpec, SeedSpec
from .tva import TVARunSpec, run_tva, tva_csv, write_tva
from .verify import (all_passed, run_suites, summary_table,
                     verification_config, write_report)

__all__ = ["build_parser", "main"]

_SUITES = ("appendix", "compensator-f", "compensator-g", "density",
           "measure-change", "projection", "spike")
_MIN_PUBLISHED_PATHS = 10_000


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected a comma-separated list of numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgc",
        description="Dynamic Gaussian copula default model: simulation, "
                    "intensities, statistical verification and the "
                    "counterparty adjustment sweep.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="model configuration JSON "
                             "(default: the built-in demonstration portfolio)")
    common.add_argument("--seed", type=int, default=None,
                        help="master seed override")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[common],
                         help="write the columnar path dump")
    sim.add_argument("--paths", type=int, default=1000)
    sim.add_argument("--steps", type=int, default=100)
    sim.add_argument("--out", type=Path, required=True)

    intens = sub.add_parser("intensity", parents=[common],
                            help="evaluate intensities, drifts and the "
                                 "party-survival probability at a state")
    intens.add_argument("--state", type=Path, required=True,
                        help="portfolio state JSON")
    intens.add_argument("--out", type=Path, default=None,
                        help="write the JSON report here instead of stdout")

    ver = sub.add_parser("verify", parents=[common],
                         help="run statistical verification suites")
    ver.add_argument("--suite", action="append", choices=_SUITES,
                     help="run only this suite (repeatable; default: all)")
    ver.add_argument("--paths", type=int, default=None,
                     help="Monte Carlo paths per suite (default: each "
                          "suite's published size)")
    ver.add_argument("--rho-grid", type=_float_list, default=None,
                     help="correlation levels for the compensator suites")
    ver.add_argument("--out", type=Path, default=None,
                     help="write the machine-readable report CSV here")

    tva = sub.add_parser("tva", parents=[common],
                         help="run the counterparty adjustment sweep")
    tva.add_argument("--paths", type=int, default=50_000)
    tva.add_argument("--steps", type=int, default=200)
    tva.add_argument("--rho-grid", type=_float_list,
                     default=(0.0, 0.2, 0.4, 0.6, 0.8))
    tva.add_argument("--lambda-grid", type=_float_list,
                     default=(0.005, 0.01, 0.02),
                     help="bank hazard levels")
    tva.add_argument("--mode", choices=("true", "fake", "both"),
                     default="both")
    tva.add_argument("--out", type=Path, default=None,
                     help="write the sweep CSV here instead of stdout")
    return parser


def _resolve(args, fallback: ModelConfig) -> tuple[ModelConfig, int]:
    config = load_config(args.config) if args.config else fallback
    seed = args.seed if args.seed is not None else config.seed
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    return config, seed


def _cmd_simulate(args) -> int:
    config, seed = _resolve(args, default_config())
    grid = GridSpec(config.horizon, args.steps)
    write_path_dump(config, grid, SeedSpec(seed), args.paths, args.out)
    return 0


def _cmd_intensity(args) -> int:
    config, _ = _resolve(args, default_config())
    state = load_state(args.state)
    report = {"t": state.t,
              "S": azema_supermartingale(config, state),
              "names": {}}
    for name in config.names:
        report["names"][str(name)] = {
            "gamma": intensity(config, state, name, Scope.FULL),
            "beta": factor_drift(config, state, name, Scope.FULL),
            "gamma_tilde": intensity_reduction(config, state, name),
            "beta_tilde": factor_drift_reduction(config, state, name),
        }
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_verify(args) -> int:
    config, seed = _resolve(args, verification_config())
    kwargs = {"suites": args.suite, "config": config, "seed": seed}
    if args.paths is not None:
        kwargs["paths"] = args.paths
    if args.rho_grid is not None:
        kwargs["rhos"] = args.rho_grid
    reports = run_suites(**kwargs)
    if args.out:
        write_report(reports, args.out)
    sys.stdout.write(summary_table(reports) + "\n")
    return 0 if all_passed(reports) else 1


def _cmd_tva(args) -> int:
    config, seed = _resolve(args, default_config())
    if args.paths < _MIN_PUBLISHED_PATHS:
        raise ConfigError(
            "paths", f"published sweeps need at least {_MIN_PUBLISHED_PATHS}")
    spec = TVARunSpec(rho_grid=args.rho_grid, bank_hazards=args.lambda_grid,
                      maturity=config.horizon, mode=args.mode,
                      paths=args.paths, step_count=args.steps, seed=seed)
    points = run_tva(spec, config)
    if args.out:
        write_tva(points, args.out)
    else:
        sys.stdout.write(tva_csv(points))
    return 0


_COMMANDS = {"simulate": _cmd_simulate, "intensity": _cmd_intensity,
             "verify": _cmd_verify, "tva": _cmd_tva}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"file error: {err}", file=sys.stderr)
        return 2
    except (NonConvergence, DegenerateHazard, FloatingPointError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
