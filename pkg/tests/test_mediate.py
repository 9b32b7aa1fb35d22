from dataclasses import replace

import numpy as np
import pytest

import abmediate as ab
from abmediate import glm, mediate
from abmediate.errors import ConfigurationError, EstimationError

SMALL_DRAWS = 200


@pytest.fixture(scope="module")
def small_result(small_dataset):
    config = ab.default_config(("business",), n_param_draws=SMALL_DRAWS)
    return ab.estimate(small_dataset, config, 11)


# --------------------------------------------------------------------- quasi_p

def test_quasi_p_all_positive():
    assert ab.quasi_p(np.ones(50)) == 0.0


def test_quasi_p_split_half():
    draws = np.concatenate([np.full(25, -1.0), np.full(25, 1.0)])
    assert ab.quasi_p(draws) == 1.0


def test_quasi_p_32_percent_below():
    draws = np.concatenate([np.full(32, -1.0), np.full(68, 1.0)])
    assert ab.quasi_p(draws) == pytest.approx(0.64)


def test_quasi_p_zeros_count_both_sides():
    draws = np.array([0.0, 1.0, 2.0, 3.0])
    assert ab.quasi_p(draws) == 0.5


# --------------------------------------------------------------- scale_per_day

def test_scale_per_day_reference_value():
    assert ab.scale_per_day(0.112, 100_000, 30) == pytest.approx(373.3333333)


def test_scale_per_day_edge_cases():
    assert ab.scale_per_day(0.0, 100_000, 30) == 0.0
    assert ab.scale_per_day(0.7, 1, 1) == 0.7
    with pytest.raises(ConfigurationError):
        ab.scale_per_day(1.0, 10, 0)


# --------------------------------------------------- percentile/p consistency

@pytest.mark.parametrize("seed", range(8))
def test_p_and_interval_agree_on_zero(seed):
    gen = np.random.default_rng(400 + seed)
    draws = gen.standard_normal(gen.integers(100, 2000)) + gen.uniform(-0.15, 0.15)
    for ci_level in (0.9, 0.95, 0.99):
        lo, hi = mediate.percentile_interval(draws, ci_level)
        p = ab.quasi_p(draws)
        outside = 0.0 < lo or 0.0 > hi
        assert (p < 1.0 - ci_level) == outside


def test_interval_brackets_median():
    gen = np.random.default_rng(2)
    draws = gen.standard_normal(501)
    lo, hi = mediate.percentile_interval(draws, 0.95)
    assert lo <= np.median(draws) <= hi


# ------------------------------------------------------------------- estimate

def test_decomposition_identity_exact(small_result):
    res = small_result
    for t in (0, 1):
        acme = (res.acme_0, res.acme_1)[t]
        ade = (res.ade_0, res.ade_1)[1 - t]
        assert np.array_equal(res.ate.draws, acme.draws + ade.draws)


def test_estimate_matches_diff_in_means_oracle(small_dataset, small_result):
    oracle = ab.ate_diff_means(small_dataset)
    mc_sd = small_result.ate.draws.std(ddof=1)
    assert abs(small_result.ate.point - oracle.point) <= 3 * mc_sd


def test_effect_estimate_fields(small_result):
    for est in (small_result.ate, small_result.acme_avg, small_result.ade_avg):
        assert est.ci_low <= est.point <= est.ci_high
        assert est.per_day == ab.scale_per_day(est.point, small_result.population,
                                               small_result.n_days)
        assert 0.0 <= est.p_value <= 1.0


def test_fixed_trials_without_mediator_terms_gives_zero_acme(small_dataset):
    config = ab.MediationConfig(
        mediator_spec=glm.mediator_model(("business",)),
        outcome_spec=glm.outcome_model(("business",), trials=glm.TRIALS_OBSERVED),
        n_param_draws=SMALL_DRAWS)
    res = ab.estimate(small_dataset, config, 5)
    assert np.all(res.acme_0.draws == 0.0)
    assert np.all(res.acme_1.draws == 0.0)
    assert np.array_equal(res.ate.draws, res.ade_0.draws)


def test_worker_invariance_bitwise(small_dataset):
    config = ab.default_config(("business",), n_param_draws=100)
    base = ab.estimate(small_dataset, config, 9, n_workers=1)
    parallel = ab.estimate(small_dataset, config, 9, n_workers=4)
    assert np.array_equal(base.ate.draws, parallel.ate.draws)
    assert np.array_equal(base.acme_0.draws, parallel.acme_0.draws)
    assert np.array_equal(base.ade_1.draws, parallel.ade_1.draws)


def test_same_seed_reproducible(small_dataset):
    config = ab.default_config(("business",), n_param_draws=100)
    a = ab.estimate(small_dataset, config, 21)
    b = ab.estimate(small_dataset, config, 21)
    assert np.array_equal(a.ate.draws, b.ate.draws)


def test_estimate_validation_errors(small_dataset):
    with pytest.raises(ConfigurationError, match="100"):
        ab.estimate(small_dataset, ab.default_config(("business",), n_param_draws=50), 1)
    empty = ab.Dataset(
        unit_ids=np.zeros(0, dtype=np.int64), treatment=np.zeros(0, dtype=np.int64),
        covariate_schema=(("business", "binary"),), covariate_values=np.zeros((0, 1)),
        mediator=np.zeros(0, dtype=np.int64), outcome=np.zeros(0, dtype=np.int64))
    with pytest.raises(EstimationError, match="empty"):
        ab.estimate(empty, ab.default_config(("business",), n_param_draws=100), 1)


def test_stage_failure_names_stage(small_dataset):
    config = ab.MediationConfig(
        mediator_spec=glm.ModelSpec(
            response="mediator", terms=("1", "business", "treatment:business", "business:treatment"),
            family=glm.POISSON),
        outcome_spec=glm.outcome_model(("business",)),
        n_param_draws=100)
    with pytest.raises(ab.NumericalError, match="mediator stage"):
        ab.estimate(small_dataset, config, 1)


def test_grid_shares_mediator_draws(small_dataset):
    med = glm.fit_irls(glm.build_design(small_dataset, glm.mediator_model(("business",))))
    out = glm.fit_irls(glm.build_design(small_dataset, glm.outcome_model(("business",))))
    config = ab.default_config(("business",), n_param_draws=100)
    ctx = mediate._PredictionContext(small_dataset, np.ones(small_dataset.n_units, dtype=bool),
                                     config, med, out)
    gen = np.random.default_rng(3)
    grid = mediate._simulate_grid(ctx, med.coefficients, out.coefficients, gen, 1)
    # binomial outcome with trials following the simulated mediator:
    # y(t, s) must equal trials(s) * probability(t) for the same m draws
    p1 = grid.y11 / np.where(grid.m1 > 0, grid.m1, 1.0)
    p1_alt = grid.y10 / np.where(grid.m0 > 0, grid.m0, 1.0)
    both = (grid.m0 > 0) & (grid.m1 > 0)
    np.testing.assert_allclose(p1[both], p1_alt[both], rtol=1e-12)


def test_mediator_sims_average(small_dataset):
    config = ab.default_config(("business",), n_param_draws=100, mediator_sims=3)
    res = ab.estimate(small_dataset, config, 13)
    assert res.ate.ci_low <= res.ate.point <= res.ate.ci_high


def test_linear_stage_pair_close_to_default(small_dataset):
    config = ab.linear_config(("business",), n_param_draws=SMALL_DRAWS)
    res = ab.estimate(small_dataset, config, 17)
    oracle = ab.ate_diff_means(small_dataset)
    assert abs(res.ate.point - oracle.point) <= 4 * res.ate.draws.std(ddof=1)


def test_monte_carlo_jitter_shrinks_with_draws(small_dataset):
    lows = {}
    for draws in (100, 800):
        endpoints = []
        for seed in range(10):
            res = ab.estimate(small_dataset,
                              ab.default_config(("business",), n_param_draws=draws),
                              900 + seed)
            endpoints.append(res.ate.ci_low)
        lows[draws] = np.std(endpoints, ddof=1)
    assert lows[800] < lows[100]


# -------------------------------------------------------- conditional_estimate

def test_conditional_subgroup_population(small_dataset):
    config = mediate.conditional_config(ab.default_config(("business",), n_param_draws=100),
                                        business=1)
    res = ab.conditional_estimate(small_dataset, config, 3)
    expected = int((small_dataset.covariate("business") == 1).sum())
    assert res.population == expected


def test_conditional_requires_assignment(small_dataset):
    with pytest.raises(ConfigurationError, match="conditional_at"):
        ab.conditional_estimate(small_dataset, ab.default_config(("business",), n_param_draws=100), 1)


def test_conditional_unknown_covariate(small_dataset):
    config = mediate.conditional_config(ab.default_config(("business",), n_param_draws=100),
                                        segment=1)
    with pytest.raises(ConfigurationError, match="segment"):
        ab.conditional_estimate(small_dataset, config, 1)


def test_conditional_empty_subgroup(small_dataset):
    config = replace(ab.default_config(("business",), n_param_draws=100),
                     conditional_at={"business": 7})
    with pytest.raises(EstimationError, match="no units match"):
        ab.conditional_estimate(small_dataset, config, 1)


def test_null_scenario_subgroup_cis_contain_zero():
    ds = ab.simulate(ab.null_scenario(n_units=20_000), 31)
    for value in (0, 1):
        config = mediate.conditional_config(
            ab.default_config(("business",), n_param_draws=SMALL_DRAWS), business=value)
        res = ab.conditional_estimate(ds, config, 31)
        assert res.ade_avg.ci_low <= 0.0 <= res.ade_avg.ci_high


# ------------------------------------------------------------------- serializing

def test_result_json_schema(small_result):
    doc = small_result.to_dict()
    for key in ("ate", "acme_0", "acme_1", "ade_0", "ade_1", "acme_avg", "ade_avg"):
        assert set(doc[key]) == {"point", "ci_low", "ci_high", "p_value", "per_day"}
    assert isinstance(doc["seed"], int)
    assert "config" in doc and "means" in doc
