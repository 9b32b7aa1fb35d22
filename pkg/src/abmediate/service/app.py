"""FastAPI service exposing the analysis pipeline to multiple clients.

Run locally with::

    uvicorn abmediate.service.app:app

Endpoints mirror the CLI subcommands one-to-one and share the same core
functions, so a given (data, seed, settings) triple returns identical
numbers through either front end.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import mediate, report, sensitivity
from .._version import __version__
from ..baselines import adjusted_direct, ate_diff_means
from ..dataset import cell_summary, load_csv, write_csv
from ..errors import (
    AbmediateError,
    ConfigurationError,
    DataValidationError,
    EstimationError,
    NumericalError,
)
from ..simulate import default_scenario, scenario_from_dict, simulate
from . import schemas

app = FastAPI(
    title="abmediate",
    version=__version__,
    description="Direct vs indirect treatment effect estimation for A/B experiments.",
)

_STATUS = {
    ConfigurationError: 400,
    DataValidationError: 422,
    NumericalError: 500,
    EstimationError: 500,
}


@app.exception_handler(AbmediateError)
async def _package_error(request: Request, err: AbmediateError) -> JSONResponse:
    status = _STATUS.get(type(err), 500)
    return JSONResponse(status_code=status,
                        content={"detail": str(err), "error_type": type(err).__name__})


def _scenario(model: schemas.ScenarioModel | None):
    if model is None:
        return default_scenario()
    return scenario_from_dict(model.model_dump())


def _dataset(data_csv: str):
    return load_csv(data_csv.encode("utf-8"))


def _covariates(dataset, names: list[str] | None) -> tuple[str, ...]:
    if names is None:
        return dataset.covariate_names
    for name in names:
        if name not in dataset.covariate_names:
            raise ConfigurationError(f"unknown covariate {name!r}; dataset has "
                                     f"{list(dataset.covariate_names)}")
    return tuple(names)


@app.get("/health", response_model=schemas.HealthResponse)
def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(status="ok", version=__version__)


@app.post("/simulate", response_model=schemas.SimulateResponse)
def simulate_endpoint(req: schemas.SimulateRequest) -> schemas.SimulateResponse:
    dataset = simulate(_scenario(req.scenario), req.seed, n_workers=req.workers)
    return schemas.SimulateResponse(n_units=dataset.n_units,
                                    csv=write_csv(dataset).decode("utf-8"))


@app.post("/summarize", response_model=schemas.SummarizeResponse)
def summarize_endpoint(req: schemas.SummarizeRequest) -> schemas.SummarizeResponse:
    dataset = _dataset(req.data_csv)
    names = list(_covariates(dataset, req.covariates)) if req.covariates is not None else None
    cells = cell_summary(dataset, names)
    return schemas.SummarizeResponse(
        n_units=dataset.n_units,
        covariates=list(dataset.covariate_names),
        cells=[cell.to_dict() for cell in cells],
    )


@app.post("/mediate", response_model=schemas.MediateResponse)
def mediate_endpoint(req: schemas.MediateRequest) -> schemas.MediateResponse:
    dataset = _dataset(req.data_csv)
    config = mediate.default_config(
        _covariates(dataset, req.covariates),
        n_param_draws=req.draws, mediator_sims=req.mediator_sims,
        ci_level=req.ci, n_days=req.days, conditional_at=req.conditional)
    if req.conditional:
        result = mediate.conditional_estimate(dataset, config, req.seed, n_workers=req.workers)
    else:
        result = mediate.estimate(dataset, config, req.seed, n_workers=req.workers)
    return schemas.MediateResponse(**result.to_dict())


@app.post("/baseline", response_model=schemas.BaselineResponse)
def baseline_endpoint(req: schemas.BaselineRequest) -> schemas.BaselineResponse:
    dataset = _dataset(req.data_csv)
    ate = ate_diff_means(dataset, n_days=req.days, ci_level=req.ci)
    adjusted = adjusted_direct(dataset, include_covariates=req.include_covariates,
                               n_days=req.days, ci_level=req.ci)
    return schemas.BaselineResponse(
        ate_unadjusted=schemas.EffectModel(**ate.to_dict()),
        adjusted_regression=schemas.EffectModel(**adjusted.to_dict()),
    )


@app.post("/sensitivity", response_model=schemas.SensitivityResponse)
def sensitivity_endpoint(req: schemas.SensitivityRequest) -> schemas.SensitivityResponse:
    dataset = _dataset(req.data_csv)
    grid = sensitivity.sensitivity_curve(
        dataset, _covariates(dataset, req.covariates),
        rho_values=sensitivity.rho_grid(req.rho_min, req.rho_max, req.rho_step),
        bootstrap_reps=req.bootstrap, seed=req.seed, ci_level=req.ci,
        n_workers=req.workers)
    return schemas.SensitivityResponse(
        rows=[schemas.SensitivityRow(**row) for row in grid.rows()],
        components=schemas.ComponentsModel(**grid.components.to_dict()),
        stage_family=grid.stage_family,
        degenerate_resamples=grid.degenerate_resamples,
        csv=sensitivity.grid_to_csv(grid).decode("utf-8"),
    )


@app.post("/report", response_model=schemas.ReportResponse)
def report_endpoint(req: schemas.ReportRequest) -> schemas.ReportResponse:
    config = report.ReportConfig(
        seed=req.seed, scenario=_scenario(req.scenario),
        n_param_draws=req.draws, mediator_sims=req.mediator_sims,
        bootstrap_reps=req.bootstrap, n_days=req.days, ci_level=req.ci,
        rho_min=req.rho_min, rho_max=req.rho_max, rho_step=req.rho_step)
    bundle = report.build_report(config, n_workers=req.workers)
    return schemas.ReportResponse(
        files={name: payload.decode("utf-8") for name, payload in bundle.files.items()},
        table2=bundle.table2_rows,
        provenance=bundle.provenance,
    )
