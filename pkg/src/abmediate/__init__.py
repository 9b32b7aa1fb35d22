"""abmediate: direct vs indirect treatment effects for randomized experiments.

Decomposes the average treatment effect measured in an A/B experiment into
the part flowing through a mediating metric (bookings) and the part acting
on the outcome (cancellations) directly, quantifies estimation uncertainty
by simulation, contrasts the decomposition with naive baselines, and sweeps
an error-correlation parameter to show how unobserved confounding would
move the conclusions.
"""

from ._version import __version__
from .baselines import adjusted_direct, ate_diff_means
from .dataset import (
    CellSummary,
    Dataset,
    ExperimentRecord,
    cell_summary,
    load_csv,
    write_csv,
)
from .errors import (
    AbmediateError,
    ConfigurationError,
    DataValidationError,
    EstimationError,
    NumericalError,
)
from .glm import (
    BINOMIAL,
    GAUSSIAN,
    POISSON,
    DesignMatrix,
    FittedGlm,
    ModelSpec,
    build_design,
    draw_params,
    fit_irls,
    mediator_model,
    outcome_model,
    predict_mean,
    sample_response,
    wald_test,
)
from .mediate import (
    EffectEstimate,
    MediationConfig,
    MediationResult,
    PotentialOutcomeGrid,
    conditional_estimate,
    default_config,
    estimate,
    linear_config,
    quasi_p,
    scale_per_day,
)
from .report import ReportBundle, ReportConfig, build_report
from .sensitivity import (
    SensitivityComponents,
    SensitivityGrid,
    acme_of_rho,
    ade_of_rho,
    fit_components,
    rho_grid,
    sensitivity_curve,
    zero_crossing,
)
from .simulate import (
    CellParams,
    ScenarioConfig,
    default_scenario,
    load_scenario,
    null_scenario,
    scenario_from_dict,
    scenario_to_dict,
    simulate,
)

__all__ = [
    "__version__",
    "AbmediateError", "ConfigurationError", "DataValidationError",
    "EstimationError", "NumericalError",
    "Dataset", "ExperimentRecord", "CellSummary",
    "load_csv", "write_csv", "cell_summary",
    "CellParams", "ScenarioConfig", "default_scenario", "null_scenario",
    "simulate", "load_scenario", "scenario_from_dict", "scenario_to_dict",
    "GAUSSIAN", "POISSON", "BINOMIAL",
    "ModelSpec", "DesignMatrix", "FittedGlm",
    "mediator_model", "outcome_model", "build_design", "fit_irls",
    "predict_mean", "draw_params", "sample_response", "wald_test",
    "MediationConfig", "MediationResult", "EffectEstimate", "PotentialOutcomeGrid",
    "default_config", "linear_config", "estimate", "conditional_estimate",
    "quasi_p", "scale_per_day",
    "ate_diff_means", "adjusted_direct",
    "SensitivityComponents", "SensitivityGrid",
    "fit_components", "acme_of_rho", "ade_of_rho", "rho_grid",
    "sensitivity_curve", "zero_crossing",
    "ReportConfig", "ReportBundle", "build_report",
]
