"""Pydantic request/response models for the HTTP service.

Datasets travel inline as CSV text (the same format the CLI reads and
writes), so the service stays stateless and any client that can produce
the CSV schema can drive it.
"""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..sensitivity import DEFAULT_BOOTSTRAP, DEFAULT_RHO_MAX, DEFAULT_RHO_MIN, DEFAULT_RHO_STEP


class HealthResponse(BaseModel):
    status: str
    version: str


class ScenarioCell(BaseModel):
    treatment: int
    covariate: int
    booking_rate: float
    cancel_prob: float


class ScenarioModel(BaseModel):
    """Mirrors the scenario config file schema."""

    n_units: int = 100_000
    p_treatment: float = 0.5
    covariate_name: str = "business"
    p_covariate: float = 0.4
    cells: list[ScenarioCell]
    exact_split: bool = False


class SimulateRequest(BaseModel):
    seed: int = 42
    scenario: ScenarioModel | None = None
    workers: int = 1


class SimulateResponse(BaseModel):
    n_units: int
    csv: str


class SummarizeRequest(BaseModel):
    data_csv: str
    covariates: list[str] | None = None


class SummarizeResponse(BaseModel):
    n_units: int
    covariates: list[str]
    cells: list[dict]


class EffectModel(BaseModel):
    point: float
    ci_low: float
    ci_high: float
    p_value: float
    per_day: float


class MediateRequest(BaseModel):
    data_csv: str
    seed: int = 42
    draws: int = Field(default=1000, description="parameter draws (>= 100)")
    mediator_sims: int = 1
    days: int = 30
    ci: float = 0.95
    covariates: list[str] | None = None
    conditional: dict[str, float] | None = None
    workers: int = 1


class MediateResponse(BaseModel):
    ate: EffectModel
    acme_0: EffectModel
    acme_1: EffectModel
    ade_0: EffectModel
    ade_1: EffectModel
    acme_avg: EffectModel
    ade_avg: EffectModel
    seed: int
    config: dict
    means: dict[str, float]


class BaselineRequest(BaseModel):
    data_csv: str
    days: int = 30
    ci: float = 0.95
    include_covariates: bool = True


class BaselineResponse(BaseModel):
    ate_unadjusted: EffectModel
    adjusted_regression: EffectModel


class SensitivityRequest(BaseModel):
    data_csv: str
    covariates: list[str] = Field(default_factory=list)
    rho_min: float = DEFAULT_RHO_MIN
    rho_max: float = DEFAULT_RHO_MAX
    rho_step: float = DEFAULT_RHO_STEP
    bootstrap: int = DEFAULT_BOOTSTRAP
    seed: int = 42
    ci: float = 0.95
    workers: int = 1


class SensitivityRow(BaseModel):
    rho: float
    acme: float
    acme_lo: float
    acme_hi: float
    ade: float
    ade_lo: float
    ade_hi: float


class ComponentsModel(BaseModel):
    beta2: float
    sigma1: float
    sigma2: float
    rho_tilde: float
    tau_hat: float
    gamma_hat: float
    n_units: int
    covariates: list[str]


class SensitivityResponse(BaseModel):
    rows: list[SensitivityRow]
    components: ComponentsModel
    stage_family: str
    degenerate_resamples: int
    csv: str


class ReportRequest(BaseModel):
    seed: int = 42
    scenario: ScenarioModel | None = None
    draws: int = 1000
    mediator_sims: int = 1
    bootstrap: int = DEFAULT_BOOTSTRAP
    days: int = 30
    ci: float = 0.95
    rho_min: float = DEFAULT_RHO_MIN
    rho_max: float = DEFAULT_RHO_MAX
    rho_step: float = DEFAULT_RHO_STEP
    workers: int = 1


class ReportResponse(BaseModel):
    files: dict[str, str]
    table2: list[dict]
    provenance: dict
