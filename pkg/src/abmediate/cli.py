"""Command-line front end.

Subcommands mirror the analysis pipeline: ``simulate`` writes experiment
CSVs, ``summarize`` aggregates them into cells, ``mediate`` runs the
two-stage decomposition, ``baseline`` runs the naive estimators,
``sensitivity`` sweeps the error-correlation grid, and ``report`` runs
everything into an output directory reproducible from the seed alone.

Exit codes: 0 success, 1 usage or configuration, 2 data validation,
3 numerical or estimation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import mediate, report, sensitivity
from ._version import __version__
from .baselines import adjusted_direct, ate_diff_means
from .dataset import cell_summary, load_csv, write_csv
from .errors import ConfigurationError, DataValidationError, EstimationError, NumericalError
from .simulate import default_scenario, load_scenario, simulate

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _covariates_arg(value: str) -> list[str] | None:
    if value == "none":
        return []
    names = [name.strip() for name in value.split(",") if name.strip()]
    if not names:
        raise argparse.ArgumentTypeError("expected NAME[,NAME...] or 'none'")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="abmediate",
                     description="Direct vs indirect treatment effects for A/B experiments.")
    parser.add_argument("--version", action="version", version=f"abmediate {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        return p

    p = add("simulate", "generate an experiment dataset CSV")
    p.add_argument("--config", type=Path, help="scenario JSON (default: stock scenario)")
    p.add_argument("--seed", type=int, default=42, help="master seed (default 42)")
    p.add_argument("--out", type=Path, required=True, help="output CSV path")
    p.add_argument("--workers", type=int, default=1)

    p = add("summarize", "per-cell aggregates of a dataset")
    p.add_argument("--data", type=Path, required=True, help="input CSV")
    p.add_argument("--covariates", type=_covariates_arg, default=None,
                   help="NAME[,NAME...] or 'none' (default: all binary covariates)")
    p.add_argument("--out", type=Path, help="output JSON (default stdout)")

    p = add("mediate", "two-stage direct/indirect effect decomposition")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--draws", type=int, default=1000, help="parameter draws (>= 100)")
    p.add_argument("--mediator-sims", type=int, default=1)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--ci", type=float, default=0.95)
    p.add_argument("--covariates", type=_covariates_arg, default=None)
    p.add_argument("--out", type=Path, help="output JSON (default stdout)")
    p.add_argument("--workers", type=int, default=1)

    p = add("baseline", "unadjusted ATE and mediator-adjusted regression")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--ci", type=float, default=0.95)
    p.add_argument("--covariates", type=_covariates_arg, default=None)
    p.add_argument("--out", type=Path, help="output JSON (default stdout)")

    p = add("sensitivity", "ACME/ADE over an error-correlation grid")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--covariates", type=_covariates_arg, default=None)
    p.add_argument("--rho-min", type=float, default=sensitivity.DEFAULT_RHO_MIN)
    p.add_argument("--rho-max", type=float, default=sensitivity.DEFAULT_RHO_MAX)
    p.add_argument("--rho-step", type=float, default=sensitivity.DEFAULT_RHO_STEP)
    p.add_argument("--bootstrap", type=int, default=sensitivity.DEFAULT_BOOTSTRAP)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--ci", type=float, default=0.95)
    p.add_argument("--out", type=Path, required=True, help="output curve CSV")
    p.add_argument("--workers", type=int, default=1)

    p = add("report", "full pipeline into an output directory")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--config", type=Path, help="scenario JSON (default: stock scenario)")
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--mediator-sims", type=int, default=1)
    p.add_argument("--bootstrap", type=int, default=sensitivity.DEFAULT_BOOTSTRAP)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--ci", type=float, default=0.95)
    p.add_argument("--rho-min", type=float, default=sensitivity.DEFAULT_RHO_MIN)
    p.add_argument("--rho-max", type=float, default=sensitivity.DEFAULT_RHO_MAX)
    p.add_argument("--rho-step", type=float, default=sensitivity.DEFAULT_RHO_STEP)
    p.add_argument("--workers", type=int, default=1)

    return parser


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("abmediate: error: a subcommand is required", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)
    return args


def _check_common(args) -> None:
    if getattr(args, "draws", 1000) < mediate.MIN_DRAWS_FOR_CI:
        raise ConfigurationError(
            f"--draws must be >= {mediate.MIN_DRAWS_FOR_CI} for interval output")
    if not 0.0 < getattr(args, "ci", 0.95) < 1.0:
        raise ConfigurationError("--ci must lie strictly inside (0, 1)")
    if getattr(args, "days", 30) <= 0:
        raise ConfigurationError("--days must be positive")
    if getattr(args, "mediator_sims", 1) < 1:
        raise ConfigurationError("--mediator-sims must be >= 1")
    if getattr(args, "workers", 1) < 1:
        raise ConfigurationError("--workers must be >= 1")
    if hasattr(args, "rho_min"):
        sensitivity.rho_grid(args.rho_min, args.rho_max, args.rho_step)
    if getattr(args, "bootstrap", sensitivity.DEFAULT_BOOTSTRAP) < sensitivity.MIN_BOOTSTRAP:
        raise ConfigurationError(f"--bootstrap must be >= {sensitivity.MIN_BOOTSTRAP}")


def _provenance(args, seed: int | None) -> dict:
    doc = {key: (str(value) if isinstance(value, Path) else value)
           for key, value in sorted(vars(args).items()) if key != "command"}
    block = {"config_hash": report.config_hash(doc), "version": __version__}
    if seed is not None:
        block["seed"] = seed
    return block


def _emit_json(doc: dict, out: Path | None) -> None:
    payload = json.dumps(doc, indent=2) + "\n"
    if out is None:
        sys.stdout.write(payload)
    else:
        out.write_text(payload, encoding="utf-8")
        print(f"wrote {out}")


def _covariates_or_default(dataset, names: list[str] | None) -> list[str]:
    if names is None:
        return list(dataset.covariate_names)
    for name in names:
        if name not in dataset.covariate_names:
            raise ConfigurationError(f"unknown covariate {name!r}; dataset has "
                                     f"{list(dataset.covariate_names)}")
    return names


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.config) if args.config else default_scenario()
    dataset = simulate(scenario, args.seed, n_workers=args.workers)
    write_csv(dataset, args.out)
    print(f"wrote {args.out} ({dataset.n_units} records)")
    return EXIT_OK


def cmd_summarize(args) -> int:
    dataset = load_csv(args.data)
    names = args.covariates
    if names is not None:
        names = _covariates_or_default(dataset, names)
    cells = cell_summary(dataset, names)
    doc = {
        "n_units": dataset.n_units,
        "covariates": list(dataset.covariate_names),
        "cells": [cell.to_dict() for cell in cells],
        "provenance": _provenance(args, seed=None),
    }
    _emit_json(doc, args.out)
    return EXIT_OK


def cmd_mediate(args) -> int:
    _check_common(args)
    dataset = load_csv(args.data)
    covariates = _covariates_or_default(dataset, args.covariates)
    config = mediate.default_config(
        tuple(covariates), n_param_draws=args.draws, mediator_sims=args.mediator_sims,
        ci_level=args.ci, n_days=args.days)
    result = mediate.estimate(dataset, config, args.seed, n_workers=args.workers)
    doc = result.to_dict()
    doc["provenance"] = _provenance(args, seed=args.seed)
    _emit_json(doc, args.out)
    return EXIT_OK


def cmd_baseline(args) -> int:
    _check_common(args)
    dataset = load_csv(args.data)
    covariates = _covariates_or_default(dataset, args.covariates)
    ate = ate_diff_means(dataset, n_days=args.days, ci_level=args.ci)
    adjusted = adjusted_direct(dataset, include_covariates=bool(covariates),
                               n_days=args.days, ci_level=args.ci)
    doc = {
        "ate_unadjusted": ate.to_dict(),
        "adjusted_regression": adjusted.to_dict(),
        "covariates": covariates,
        "provenance": _provenance(args, seed=None),
    }
    _emit_json(doc, args.out)
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    _check_common(args)
    dataset = load_csv(args.data)
    covariates = _covariates_or_default(dataset, args.covariates)
    grid = sensitivity.sensitivity_curve(
        dataset, tuple(covariates),
        rho_values=sensitivity.rho_grid(args.rho_min, args.rho_max, args.rho_step),
        bootstrap_reps=args.bootstrap, seed=args.seed, ci_level=args.ci,
        n_workers=args.workers)
    args.out.write_bytes(sensitivity.grid_to_csv(grid))
    print(f"wrote {args.out} ({grid.rho_values.shape[0]} grid points, "
          f"rho_tilde={grid.components.rho_tilde:.4f})")
    return EXIT_OK


def cmd_report(args) -> int:
    _check_common(args)
    scenario = load_scenario(args.config) if args.config else default_scenario()
    config = report.ReportConfig(
        seed=args.seed, scenario=scenario, n_param_draws=args.draws,
        mediator_sims=args.mediator_sims, bootstrap_reps=args.bootstrap,
        n_days=args.days, ci_level=args.ci,
        rho_min=args.rho_min, rho_max=args.rho_max, rho_step=args.rho_step)
    bundle = report.build_report(config, n_workers=args.workers)
    for path in bundle.write(args.out_dir):
        print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "summarize": cmd_summarize,
    "mediate": cmd_mediate,
    "baseline": cmd_baseline,
    "sensitivity": cmd_sensitivity,
    "report": cmd_report,
}


def run(args: argparse.Namespace) -> int:
    """Dispatch a parsed command, mapping package errors to exit codes."""
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as err:
        print(f"abmediate: configuration error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DataValidationError as err:
        print(f"abmediate: data validation error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, EstimationError) as err:
        print(f"abmediate: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FileNotFoundError as err:
        print(f"abmediate: {err}", file=sys.stderr)
        return EXIT_DATA


def main(argv: list[str] | None = None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    code = run(args)
    if argv is None:
        sys.exit(code)
    return code


if __name__ == "__main__":
    main()
