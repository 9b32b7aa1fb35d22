"""End-to-end analysis bundle: simulate, estimate, contrast, sweep.

``build_report`` produces every artifact in memory so a run either yields
a complete bundle or nothing; writing to disk is a separate step. The
bundle is a pure function of (config, package version): the same seed
reproduces every byte.

Files in a bundle:

* ``data.csv``       simulated experiment data
* ``summary.json``   per-cell aggregates of the simulated data
* ``table2.json``    the four-method effect comparison (per-day, 3 decimals)
* ``mediation.json`` full-precision two-stage decomposition
* ``sensitivity_with_confounder.csv`` / ``sensitivity_without_confounder.csv``
  ACME/ADE over the rho grid; the "without" curve drops the covariate at
  analysis time from the same dataset
* ``provenance.json`` seed, config hash, version, and file digests
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import mediate, sensitivity
from ._version import __version__
from .baselines import adjusted_direct, ate_diff_means
from .dataset import Dataset, cell_summary, write_csv
from .errors import ConfigurationError
from .simulate import ScenarioConfig, default_scenario, scenario_to_dict, simulate

DATA_FILE = "data.csv"
SUMMARY_FILE = "summary.json"
TABLE2_FILE = "table2.json"
MEDIATION_FILE = "mediation.json"
SENSITIVITY_WITH_FILE = "sensitivity_with_confounder.csv"
SENSITIVITY_WITHOUT_FILE = "sensitivity_without_confounder.csv"
PROVENANCE_FILE = "provenance.json"


@dataclass(frozen=True)
class ReportConfig:
    """Everything a report run depends on besides the package version."""

    seed: int = 42
    scenario: ScenarioConfig = field(default_factory=default_scenario)
    n_param_draws: int = 1000
    mediator_sims: int = 1
    bootstrap_reps: int = 500
    n_days: int = 30
    ci_level: float = 0.95
    rho_min: float = sensitivity.DEFAULT_RHO_MIN
    rho_max: float = sensitivity.DEFAULT_RHO_MAX
    rho_step: float = sensitivity.DEFAULT_RHO_STEP

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "scenario": scenario_to_dict(self.scenario),
            "n_param_draws": self.n_param_draws,
            "mediator_sims": self.mediator_sims,
            "bootstrap_reps": self.bootstrap_reps,
            "n_days": self.n_days,
            "ci_level": self.ci_level,
            "rho_min": self.rho_min,
            "rho_max": self.rho_max,
            "rho_step": self.rho_step,
        }


def config_hash(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _dump_json(doc: dict) -> bytes:
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


@dataclass(frozen=True)
class ReportBundle:
    """All report artifacts plus the comparison rows, ready to serialize."""

    files: dict[str, bytes]
    table2_rows: list[dict]
    provenance: dict

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, payload in self.files.items():
            path = out / name
            path.write_bytes(payload)
            written.append(path)
        return written


def summary_document(dataset: Dataset, provenance: dict) -> dict:
    cells = cell_summary(dataset)
    return {
        "n_units": dataset.n_units,
        "covariates": list(dataset.covariate_names),
        "cells": [cell.to_dict() for cell in cells],
        "provenance": provenance,
    }


def table2_document(rows: list[dict], n_days: int, provenance: dict) -> dict:
    display = [
        {"method": row["method"],
         "per_day": round(row["per_day"], 3),
         "p_value": round(row["p_value"], 3)}
        for row in rows
    ]
    return {"rows": display, "n_days": n_days, "provenance": provenance}


def build_report(config: ReportConfig, n_workers: int = 1,
                 dataset: Dataset | None = None) -> ReportBundle:
    """Run the full pipeline; see the module docstring for the artifacts.

    ``dataset`` substitutes pre-loaded data for the simulation step (the
    scenario in ``config`` is then ignored for generation but still hashed
    as part of the run configuration).
    """
    cfg_hash = config_hash(config.to_dict())
    provenance = {"seed": config.seed, "config_hash": cfg_hash, "version": __version__}

    if dataset is None:
        dataset = simulate(config.scenario, config.seed, n_workers=n_workers)
    covariate = config.scenario.covariate_name
    if covariate not in dataset.covariate_names:
        raise ConfigurationError(
            f"dataset lacks the scenario covariate {covariate!r}")

    data_csv = write_csv(dataset)

    med_config = mediate.default_config(
        (covariate,), n_param_draws=config.n_param_draws,
        mediator_sims=config.mediator_sims, ci_level=config.ci_level,
        n_days=config.n_days)
    full = mediate.estimate(dataset, med_config, config.seed, n_workers=n_workers)
    by_subgroup = {
        value: mediate.conditional_estimate(
            dataset, mediate.conditional_config(med_config, **{covariate: value}),
            config.seed, n_workers=n_workers)
        for value in (1, 0)
    }

    ate = ate_diff_means(dataset, n_days=config.n_days, ci_level=config.ci_level)
    adjusted = adjusted_direct(dataset, include_covariates=True,
                               n_days=config.n_days, ci_level=config.ci_level)
    table2_rows = [
        {"method": "unadjusted-ate", "per_day": ate.per_day, "p_value": ate.p_value},
        {"method": "adjusted-regression", "per_day": adjusted.per_day,
         "p_value": adjusted.p_value},
        {"method": f"two-stage {covariate}=1",
         "per_day": by_subgroup[1].ade_avg.per_day,
         "p_value": by_subgroup[1].ade_avg.p_value},
        {"method": f"two-stage {covariate}=0",
         "per_day": by_subgroup[0].ade_avg.per_day,
         "p_value": by_subgroup[0].ade_avg.p_value},
    ]

    grid = sensitivity.rho_grid(config.rho_min, config.rho_max, config.rho_step)
    curves = {
        SENSITIVITY_WITH_FILE: sensitivity.sensitivity_curve(
            dataset, (covariate,), rho_values=grid,
            bootstrap_reps=config.bootstrap_reps, seed=config.seed,
            ci_level=config.ci_level, n_workers=n_workers),
        SENSITIVITY_WITHOUT_FILE: sensitivity.sensitivity_curve(
            dataset, (), rho_values=grid,
            bootstrap_reps=config.bootstrap_reps, seed=config.seed,
            ci_level=config.ci_level, n_workers=n_workers),
    }

    mediation_doc = full.to_dict()
    mediation_doc["provenance"] = provenance

    files: dict[str, bytes] = {
        DATA_FILE: data_csv,
        SUMMARY_FILE: _dump_json(summary_document(dataset, provenance)),
        TABLE2_FILE: _dump_json(table2_document(table2_rows, config.n_days, provenance)),
        MEDIATION_FILE: _dump_json(mediation_doc),
        SENSITIVITY_WITH_FILE: sensitivity.grid_to_csv(curves[SENSITIVITY_WITH_FILE]),
        SENSITIVITY_WITHOUT_FILE: sensitivity.grid_to_csv(curves[SENSITIVITY_WITHOUT_FILE]),
    }
    manifest = dict(provenance)
    manifest["files"] = {name: hashlib.sha256(payload).hexdigest()
                         for name, payload in sorted(files.items())}
    files[PROVENANCE_FILE] = _dump_json(manifest)

    return ReportBundle(files=files, table2_rows=table2_rows, provenance=manifest)
