"""Two-stage mediation estimator with simulation-based uncertainty.

The estimator decomposes the average treatment effect on cancellations
into the part transmitted through bookings (ACME, the indirect effect)
and the rest (ADE, the direct effect):

1. Fit the mediator and outcome stage models on the full dataset.
2. For each of J parameter draws (one multivariate-normal draw per stage,
   reflecting estimation uncertainty): simulate each unit's potential
   booking counts under control and under treatment, then predict the
   mean outcome for all four (treatment, bookings-source) combinations
   from one shared grid.
3. Summarize the J draw-level effects: point estimate is the median,
   intervals are percentile bounds, and the p-value is the two-sided
   sign fraction of the draws.

Draw-level ADE values are defined by subtraction from the total effect
computed on the same grid, so ate_j == acme_j(t) + ade_j(1-t) holds for
every draw by construction rather than up to Monte Carlo error.

Each draw j consumes its own random substream keyed by (seed, j), so
results are identical for any worker count and any scheduling order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import glm, rng
from .dataset import Dataset
from .errors import ConfigurationError, EstimationError, NumericalError

MIN_DRAWS_FOR_CI = 100


@dataclass(frozen=True)
class MediationConfig:
    """Settings for one estimator run.

    ``conditional_at`` restricts steps 2-3 to units matching a covariate
    assignment (e.g. {"business": 1}) with those covariates pinned in all
    predictions; scaling then defaults to the subgroup size. ``population``
    and ``n_days`` convert per-visitor effects into per-day units.
    """

    mediator_spec: glm.ModelSpec
    outcome_spec: glm.ModelSpec
    n_param_draws: int = 1000
    mediator_sims: int = 1
    ci_level: float = 0.95
    conditional_at: dict[str, float] | None = None
    n_days: int = 30
    population: int | None = None

    def validate(self) -> None:
        if self.n_param_draws < MIN_DRAWS_FOR_CI:
            raise ConfigurationError(
                f"need at least {MIN_DRAWS_FOR_CI} parameter draws for interval output, "
                f"got {self.n_param_draws}")
        if self.mediator_sims < 1:
            raise ConfigurationError("mediator_sims must be >= 1")
        if not 0.0 < self.ci_level < 1.0:
            raise ConfigurationError("ci_level must lie strictly inside (0, 1)")
        if self.n_days <= 0:
            raise ConfigurationError("n_days must be positive")
        if self.mediator_spec.response != "mediator":
            raise ConfigurationError("mediator_spec must model the mediator")
        if self.outcome_spec.response != "outcome":
            raise ConfigurationError("outcome_spec must model the outcome")

    def echo(self) -> dict:
        return {
            "mediator_spec": {"terms": list(self.mediator_spec.terms),
                              "family": self.mediator_spec.family},
            "outcome_spec": {"terms": list(self.outcome_spec.terms),
                             "family": self.outcome_spec.family,
                             "trials": self.outcome_spec.trials},
            "n_param_draws": self.n_param_draws,
            "mediator_sims": self.mediator_sims,
            "ci_level": self.ci_level,
            "conditional_at": self.conditional_at,
            "n_days": self.n_days,
            "population": self.population,
        }


def default_config(covariates: tuple[str, ...] | list[str] = ("business",), **kwargs) -> MediationConfig:
    """Poisson bookings stage plus binomial cancellations-per-booking stage."""
    return MediationConfig(
        mediator_spec=glm.mediator_model(covariates),
        outcome_spec=glm.outcome_model(covariates),
        **kwargs,
    )


def linear_config(covariates: tuple[str, ...] | list[str] = ("business",), **kwargs) -> MediationConfig:
    """Fully linear stage pair (what the sensitivity sweep assumes)."""
    return MediationConfig(
        mediator_spec=glm.mediator_model(covariates, family=glm.GAUSSIAN),
        outcome_spec=glm.outcome_model(covariates, family=glm.GAUSSIAN),
        **kwargs,
    )


@dataclass(frozen=True)
class EffectEstimate:
    """One effect with uncertainty, per visitor and per day."""

    point: float
    ci_low: float
    ci_high: float
    p_value: float
    per_day: float
    mean: float
    draws: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"point": self.point, "ci_low": self.ci_low, "ci_high": self.ci_high,
                "p_value": self.p_value, "per_day": self.per_day}


@dataclass(frozen=True)
class PotentialOutcomeGrid:
    """Per-unit potential quantities for a single parameter draw.

    ``m0``/``m1`` are the simulated potential bookings under control and
    treatment (averaged over mediator_sims); ``y[t][s]`` is the predicted
    mean outcome under treatment t with bookings simulated under arm s.
    All four predictions share the same mediator draws.
    """

    m0: np.ndarray
    m1: np.ndarray
    y00: np.ndarray
    y01: np.ndarray
    y10: np.ndarray
    y11: np.ndarray


@dataclass(frozen=True)
class MediationResult:
    """Draw-level effect decomposition with config and seed echo."""

    acme_0: EffectEstimate
    acme_1: EffectEstimate
    ade_0: EffectEstimate
    ade_1: EffectEstimate
    ate: EffectEstimate
    acme_avg: EffectEstimate
    ade_avg: EffectEstimate
    seed: int
    config: MediationConfig
    population: int
    n_days: int

    def to_dict(self) -> dict:
        estimates = {
            "ate": self.ate, "acme_0": self.acme_0, "acme_1": self.acme_1,
            "ade_0": self.ade_0, "ade_1": self.ade_1,
            "acme_avg": self.acme_avg, "ade_avg": self.ade_avg,
        }
        doc = {name: est.to_dict() for name, est in estimates.items()}
        doc["seed"] = self.seed
        doc["config"] = self.config.echo()
        doc["config"]["population"] = self.population
        doc["means"] = {name: est.mean for name, est in estimates.items()}
        return doc


def quasi_p(draws: np.ndarray) -> float:
    """Two-sided sign-fraction p-value; draws equal to zero count on both sides."""
    draws = np.asarray(draws, dtype=np.float64)
    if draws.size == 0:
        raise ConfigurationError("quasi_p needs a nonempty draw vector")
    below = float(np.mean(draws <= 0.0))
    above = float(np.mean(draws >= 0.0))
    return min(1.0, 2.0 * min(below, above))


def percentile_interval(draws: np.ndarray, ci_level: float) -> tuple[float, float]:
    """Order-statistic percentile interval.

    The lower bound is the smallest draw whose empirical CDF reaches
    alpha/2 (and symmetrically for the upper bound), which makes
    "p-value below alpha" and "zero outside the interval" agree exactly.
    """
    draws = np.sort(np.asarray(draws, dtype=np.float64))
    n = draws.shape[0]
    alpha = 1.0 - ci_level
    k = max(int(math.ceil(n * alpha / 2.0)), 1)
    return float(draws[k - 1]), float(draws[n - k])


def scale_per_day(effect_per_visitor: float, population: int, n_days: int) -> float:
    """Convert a per-visitor effect into a daily count for the population."""
    if n_days <= 0:
        raise ConfigurationError("n_days must be positive")
    return effect_per_visitor * population / n_days


def effect_from_draws(draws: np.ndarray, ci_level: float, population: int,
                      n_days: int) -> EffectEstimate:
    point = float(np.median(draws))
    lo, hi = percentile_interval(draws, ci_level)
    return EffectEstimate(
        point=point, ci_low=lo, ci_high=hi,
        p_value=quasi_p(draws),
        per_day=scale_per_day(point, population, n_days),
        mean=float(draws.mean()),
        draws=draws,
    )


class _PredictionContext:
    """Precomputed pieces for fast counterfactual prediction on a unit view.

    The mediator never enters the mediator model and the stage designs are
    fixed given the treatment override, so per-draw work reduces to matrix
    products plus any mediator-dependent outcome columns.
    """

    def __init__(self, dataset: Dataset, view: np.ndarray, config: MediationConfig,
                 mediator_fit: glm.FittedGlm, outcome_fit: glm.FittedGlm):
        pinned = dict(config.conditional_at or {})

        def column(role: str) -> np.ndarray:
            if role in pinned:
                return np.full(int(view.sum()), float(pinned[role]))
            return dataset.column(role)[view]

        def term_column(term: str, treatment: float, mediator: np.ndarray | None) -> np.ndarray:
            out = np.ones(self.n_units)
            for factor in glm.term_factors(term):
                if factor == "treatment":
                    out = out * treatment
                elif factor == "mediator":
                    out = out * mediator
                else:
                    out = out * column(factor)
            return out

        self.n_units = int(view.sum())
        self.mediator_fit = mediator_fit
        self.outcome_fit = outcome_fit
        self.observed_mediator = dataset.column("mediator")[view]

        self.med_X = {t: np.column_stack([term_column(term, float(t), None)
                                          for term in mediator_fit.spec.terms])
                      for t in (0, 1)}
        out_terms = outcome_fit.spec.terms
        self.out_fixed_idx = [j for j, term in enumerate(out_terms)
                              if "mediator" not in glm.term_factors(term)]
        self.out_med_idx = [j for j, term in enumerate(out_terms)
                            if "mediator" in glm.term_factors(term)]
        self.out_X_fixed = {t: np.column_stack([term_column(out_terms[j], float(t), None)
                                                for j in self.out_fixed_idx])
                            for t in (0, 1)}

        # Mediator-dependent outcome columns factor as (fixed part) * mediator.
        def mediator_free_part(term: str, treatment: float):
            out = 1.0
            for factor in glm.term_factors(term):
                if factor == "mediator":
                    continue
                out = out * (treatment if factor == "treatment" else column(factor))
            return out

        self.out_med_partial = {
            t: [mediator_free_part(out_terms[j], float(t)) for j in self.out_med_idx]
            for t in (0, 1)
        }

    def mediator_means(self, t: int, params: np.ndarray) -> np.ndarray:
        eta = self.med_X[t] @ params
        family = self.mediator_fit.spec.family
        if family == glm.GAUSSIAN:
            return eta
        if family == glm.POISSON:
            return np.exp(eta)
        raise ConfigurationError("the mediator stage supports gaussian and poisson families")

    def outcome_means(self, t: int, mediator: np.ndarray, params: np.ndarray) -> np.ndarray:
        eta = self.out_X_fixed[t] @ params[self.out_fixed_idx]
        for j, partial in zip(self.out_med_idx, self.out_med_partial[t]):
            eta = eta + params[j] * (partial * mediator)
        spec = self.outcome_fit.spec
        if spec.family == glm.GAUSSIAN:
            return eta
        if spec.family == glm.POISSON:
            return np.exp(eta)
        trials = mediator if spec.trials == glm.TRIALS_SIMULATED else self.observed_mediator
        return trials * expit(eta)


def _simulate_grid(ctx: _PredictionContext, med_params: np.ndarray, out_params: np.ndarray,
                   generator: np.random.Generator, mediator_sims: int) -> PotentialOutcomeGrid:
    family = ctx.mediator_fit.spec.family
    scale = ctx.mediator_fit.residual_sd if family == glm.GAUSSIAN else None
    mu = {t: ctx.mediator_means(t, med_params) for t in (0, 1)}
    m_acc = {0: 0.0, 1: 0.0}
    y_acc = {(t, s): 0.0 for t in (0, 1) for s in (0, 1)}
    for _ in range(mediator_sims):
        m_draw = {s: glm.sample_response(family, mu[s], None, generator, scale=scale)
                  for s in (0, 1)}
        for s in (0, 1):
            m_acc[s] = m_acc[s] + m_draw[s]
            for t in (0, 1):
                y_acc[(t, s)] = y_acc[(t, s)] + ctx.outcome_means(t, m_draw[s], out_params)
    inv = 1.0 / mediator_sims
    return PotentialOutcomeGrid(
        m0=m_acc[0] * inv, m1=m_acc[1] * inv,
        y00=y_acc[(0, 0)] * inv, y01=y_acc[(0, 1)] * inv,
        y10=y_acc[(1, 0)] * inv, y11=y_acc[(1, 1)] * inv,
    )


def _fit_stage(name: str, dataset: Dataset, spec: glm.ModelSpec) -> glm.FittedGlm:
    try:
        return glm.fit_irls(glm.build_design(dataset, spec))
    except NumericalError as err:
        raise NumericalError(f"{name} stage: {err}",
                             last_coefficients=err.last_coefficients) from err


def estimate(dataset: Dataset, config: MediationConfig, seed: int,
             n_workers: int = 1) -> MediationResult:
    """Run the two-stage estimator; deterministic given (dataset, config, seed)."""
    config.validate()
    seed = rng.check_seed(seed)
    if dataset.n_units == 0:
        raise EstimationError("cannot estimate on an empty dataset")
    if n_workers < 1:
        raise ConfigurationError("n_workers must be >= 1")

    mediator_fit = _fit_stage("mediator", dataset, config.mediator_spec)
    outcome_fit = _fit_stage("outcome", dataset, config.outcome_spec)

    view = np.ones(dataset.n_units, dtype=bool)
    if config.conditional_at:
        for name, value in config.conditional_at.items():
            view &= dataset.covariate(name) == float(value)
        if not view.any():
            raise EstimationError(
                f"no units match the conditional assignment {config.conditional_at}")

    ctx = _PredictionContext(dataset, view, config, mediator_fit, outcome_fit)
    J = config.n_param_draws
    acme_0 = np.empty(J)
    acme_1 = np.empty(J)
    ate = np.empty(J)

    def run_draw(j: int) -> None:
        generator = rng.substream(seed, rng.STREAM_MEDIATION, j)
        med_params = glm.draw_params(mediator_fit, generator)
        out_params = glm.draw_params(outcome_fit, generator)
        grid = _simulate_grid(ctx, med_params, out_params, generator, config.mediator_sims)
        p00 = float(np.mean(grid.y00))
        p01 = float(np.mean(grid.y01))
        p10 = float(np.mean(grid.y10))
        p11 = float(np.mean(grid.y11))
        acme_0[j] = p01 - p00
        acme_1[j] = p11 - p10
        ate[j] = p11 - p00

    if n_workers == 1:
        for j in range(J):
            run_draw(j)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run_draw, range(J)))

    # Defined by subtraction from the shared grid so the decomposition
    # ate_j = acme_j(t) + ade_j(1-t) holds per draw by construction.
    ade_0 = ate - acme_1
    ade_1 = ate - acme_0

    population = config.population if config.population is not None else int(view.sum())
    make = lambda draws: effect_from_draws(draws, config.ci_level, population, config.n_days)
    return MediationResult(
        acme_0=make(acme_0), acme_1=make(acme_1),
        ade_0=make(ade_0), ade_1=make(ade_1),
        ate=make(ate),
        acme_avg=make(0.5 * (acme_0 + acme_1)),
        ade_avg=make(0.5 * (ade_0 + ade_1)),
        seed=seed, config=config,
        population=population, n_days=config.n_days,
    )


def conditional_estimate(dataset: Dataset, config: MediationConfig, seed: int,
                         n_workers: int = 1) -> MediationResult:
    """The estimator restricted to units matching config.conditional_at."""
    if not config.conditional_at:
        raise ConfigurationError("conditional_estimate requires conditional_at in the config")
    for name in config.conditional_at:
        for spec in (config.mediator_spec, config.outcome_spec):
            if not any(name in glm.term_factors(term) for term in spec.terms):
                raise ConfigurationError(
                    f"conditional covariate {name!r} does not appear in the {spec.response} model")
    return estimate(dataset, config, seed, n_workers=n_workers)


def conditional_config(config: MediationConfig, **assignment: float) -> MediationConfig:
    return replace(config, conditional_at=dict(assignment), population=None)
