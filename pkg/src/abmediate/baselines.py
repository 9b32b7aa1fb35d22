"""Naive effect estimators used as comparison baselines.

``ate_diff_means`` is the standard unadjusted difference in outcome means
(the total effect). ``adjusted_direct`` conditions a linear outcome
regression on the mediator, which is exactly the tempting-but-biased way
to read a "direct effect" off an experiment: conditioning on a
post-treatment variable opens the confounder path, so it reports a
nonzero direct effect even when the truth is zero.
"""

from __future__ import annotations

from math import erfc, sqrt

import numpy as np
from scipy.special import ndtri

from . import glm
from .dataset import Dataset
from .errors import EstimationError
from .mediate import EffectEstimate, scale_per_day


def _normal_effect(point: float, se: float, ci_level: float, population: int,
                   n_days: int) -> EffectEstimate:
    z = ndtri(1.0 - (1.0 - ci_level) / 2.0)
    stat = point / se if se > 0 else np.inf * np.sign(point)
    return EffectEstimate(
        point=point,
        ci_low=point - z * se,
        ci_high=point + z * se,
        p_value=erfc(abs(stat) / sqrt(2.0)) if np.isfinite(stat) else 0.0,
        per_day=scale_per_day(point, population, n_days),
        mean=point,
    )


def ate_diff_means(dataset: Dataset, n_days: int = 30, ci_level: float = 0.95,
                   population: int | None = None) -> EffectEstimate:
    """Difference in mean outcomes (treated minus control) with a Welch SE."""
    treated = dataset.outcome[dataset.treatment == 1].astype(np.float64)
    control = dataset.outcome[dataset.treatment == 0].astype(np.float64)
    if treated.size == 0 or control.size == 0:
        raise EstimationError("both treatment arms must be nonempty")
    point = float(treated.mean() - control.mean())
    if treated.size < 2 or control.size < 2:
        raise EstimationError("need at least two units per arm for a standard error")
    se = sqrt(treated.var(ddof=1) / treated.size + control.var(ddof=1) / control.size)
    if population is None:
        population = dataset.n_units
    return _normal_effect(point, se, ci_level, population, n_days)


def adjusted_fit(dataset: Dataset, include_covariates: bool = True) -> glm.FittedGlm:
    """The linear outcome-on-treatment-and-mediator regression itself."""
    covariates = dataset.covariate_names if include_covariates else ()
    spec = glm.ModelSpec(response="outcome",
                         terms=(glm.INTERCEPT, "treatment", "mediator") + tuple(covariates),
                         family=glm.GAUSSIAN)
    return glm.fit_irls(glm.build_design(dataset, spec))


def adjusted_direct(dataset: Dataset, include_covariates: bool = True, n_days: int = 30,
                    ci_level: float = 0.95, population: int | None = None) -> EffectEstimate:
    """Treatment coefficient of the mediator-adjusted linear regression.

    This is the deliberately biased baseline; see the module docstring.
    """
    if not np.any(dataset.treatment == 1) or not np.any(dataset.treatment == 0):
        raise EstimationError("both treatment arms must be nonempty")
    fit = adjusted_fit(dataset, include_covariates=include_covariates)
    test = glm.wald_test(fit, "treatment")
    if population is None:
        population = dataset.n_units
    return _normal_effect(fit.coefficient("treatment"), test.std_error, ci_level,
                          population, n_days)
