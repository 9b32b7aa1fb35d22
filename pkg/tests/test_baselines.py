import numpy as np
import pytest

import abmediate as ab
from abmediate.baselines import adjusted_fit
from abmediate.errors import EstimationError

from conftest import make_dataset

# Brute-force oracle, frozen before the estimator code existed: treatment
# coefficient of lstsq([1, T, M, X], C) over seeds 100..109 of the stock
# scenario (mean and sd across the 10 reseeds).
ORACLE_ADJUSTED_MEAN = 0.020919492
ORACLE_ADJUSTED_SD = 0.001553242

ANALYTIC_ATE_PER_VISITOR = 0.4 * 2.0 * 0.14  # covariate share x booking lift x cancel rate


def population_ols(include_covariate: bool) -> np.ndarray:
    """Closed-form least-squares coefficients implied by the stock scenario.

    Builds the population moment matrix of [1, T, M, (X)] against C from
    the scenario's cell shares, Poisson rates, and cancellation
    probabilities; independent of both the simulator and the GLM code.
    """
    scenario = ab.default_scenario()
    shares = {(t, x): (scenario.p_treatment if t else 1 - scenario.p_treatment)
              * (scenario.p_covariate if x else 1 - scenario.p_covariate)
              for t in (0, 1) for x in (0, 1)}
    rate = {cell: params.booking_rate for cell, params in scenario.cells.items()}
    prob = {cell: params.cancel_prob for cell, params in scenario.cells.items()}

    def mom(f):
        return sum(shares[c] * f(c) for c in shares)

    def key(a, b):
        return tuple(sorted((a, b)))

    moments = {
        key("1", "1"): 1.0,
        key("1", "T"): mom(lambda c: c[0]),
        key("1", "M"): mom(lambda c: rate[c]),
        key("1", "X"): mom(lambda c: c[1]),
        key("T", "T"): mom(lambda c: c[0]),
        key("T", "M"): mom(lambda c: c[0] * rate[c]),
        key("T", "X"): mom(lambda c: c[0] * c[1]),
        key("M", "M"): mom(lambda c: rate[c] + rate[c] ** 2),
        key("M", "X"): mom(lambda c: c[1] * rate[c]),
        key("X", "X"): mom(lambda c: c[1]),
        key("1", "C"): mom(lambda c: prob[c] * rate[c]),
        key("T", "C"): mom(lambda c: c[0] * prob[c] * rate[c]),
        key("M", "C"): mom(lambda c: prob[c] * (rate[c] + rate[c] ** 2)),
        key("X", "C"): mom(lambda c: c[1] * prob[c] * rate[c]),
    }
    names = ["1", "T", "M", "X"] if include_covariate else ["1", "T", "M"]
    gram = np.array([[moments[key(a, b)] for b in names] for a in names])
    rhs = np.array([moments[key(a, "C")] for a in names])
    return np.linalg.solve(gram, rhs)


# -------------------------------------------------------------- ate_diff_means

def test_ate_matches_analytic_value(default_dataset):
    est = ab.ate_diff_means(default_dataset)
    se = (est.ci_high - est.ci_low) / (2 * 1.959964)
    assert abs(est.point - ANALYTIC_ATE_PER_VISITOR) <= 5 * se
    assert 345.0 <= est.per_day <= 405.0
    assert est.p_value < 0.01


def test_ate_identical_arms_is_zero():
    bookings = [2, 0, 1, 3, 1, 2, 0, 1, 3, 1]
    cancels = [1, 0, 0, 2, 1, 1, 0, 0, 2, 1]
    ds = make_dataset([0] * 5 + [1] * 5, [0] * 10, bookings, cancels)
    assert ab.ate_diff_means(ds).point == 0.0


def test_ate_single_arm_errors():
    ds = make_dataset([1, 1, 1], [0, 0, 0], [1, 1, 1], [0, 0, 0])
    with pytest.raises(EstimationError, match="arms"):
        ab.ate_diff_means(ds)


def test_ate_per_day_scaling(small_dataset):
    est = ab.ate_diff_means(small_dataset, n_days=10)
    assert est.per_day == pytest.approx(est.point * small_dataset.n_units / 10)


# ------------------------------------------------------------- adjusted_direct

def test_adjusted_direct_reproduces_known_bias(default_dataset):
    est = ab.adjusted_direct(default_dataset, include_covariates=True)
    ate = ab.ate_diff_means(default_dataset)
    assert est.point > 0.0
    assert est.p_value < 0.01
    assert est.point < ate.point
    assert abs(est.point - ORACLE_ADJUSTED_MEAN) <= 3 * ORACLE_ADJUSTED_SD


def test_adjusted_direct_matches_population_coefficients(default_dataset):
    pop = population_ols(include_covariate=True)
    fit = adjusted_fit(default_dataset, include_covariates=True)
    # treatment and mediator coefficients approach the population projection
    assert abs(fit.coefficient("treatment") - pop[1]) <= 4 * fit.std_error("treatment")
    assert abs(fit.coefficient("mediator") - pop[2]) <= 4 * fit.std_error("mediator")


def test_adjusted_direct_without_covariates(default_dataset):
    pop = population_ols(include_covariate=False)
    est = ab.adjusted_direct(default_dataset, include_covariates=False)
    se = (est.ci_high - est.ci_low) / (2 * 1.959964)
    assert abs(est.point - pop[1]) <= 4 * se


def test_adjusted_direct_unconfounded_scenario_is_unbiased():
    # homogeneous booking rates and one shared cancel probability: conditioning
    # on the mediator no longer opens a confounding path
    ds = ab.simulate(ab.null_scenario(n_units=50_000), 19)
    est = ab.adjusted_direct(ds, include_covariates=True)
    se = (est.ci_high - est.ci_low) / (2 * 1.959964)
    assert abs(est.point) <= 3 * se


def test_adjusted_direct_single_arm_errors():
    ds = make_dataset([0, 0, 0, 0], [0, 1, 0, 1], [1, 2, 1, 0], [0, 1, 1, 0])
    with pytest.raises(EstimationError, match="arms"):
        ab.adjusted_direct(ds)
