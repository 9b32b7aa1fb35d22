import numpy as np
import pytest

import abmediate as ab
from abmediate import sensitivity
from abmediate.errors import ConfigurationError, EstimationError, NumericalError

from conftest import make_dataset


def correlated_error_dataset(seed: int, n: int = 5000, rho_star: float = 0.5,
                             beta2: float = 1.0, gamma: float = 2.0,
                             direct: float = 0.0) -> ab.Dataset:
    """Linear structural data with a known error correlation.

    M = 2 + beta2*T + 0.8*X + e2 and Y = 1 + direct*T + gamma*M + 0.5*X + e3
    with corr(e2, e3) = rho_star, so the true indirect effect is
    beta2 * gamma and the formula evaluated at rho_star must recover it.
    Counts are scaled/rounded onto a lattice fine enough to keep the
    rounding error negligible; outcome <= mediator is enforced by
    construction margins.
    """
    gen = np.random.default_rng(seed)
    t = gen.integers(0, 2, n).astype(np.float64)
    x = gen.integers(0, 2, n).astype(np.float64)
    e2 = gen.standard_normal(n)
    e3 = rho_star * e2 + np.sqrt(1 - rho_star**2) * gen.standard_normal(n)
    m = 20.0 + beta2 * t + 0.8 * x + e2
    # the outcome intercept keeps both clip boundaries > 4 sd away
    y = 12.0 + direct * t + gamma * (m - 20.0) + 0.5 * x + e3
    # map onto integer counts at 1/256 resolution, keep outcome below mediator
    m_counts = np.round(m * 256).astype(np.int64)
    y_counts = np.clip(np.round(y * 256).astype(np.int64), 0, m_counts)
    return ab.Dataset(
        unit_ids=np.arange(n, dtype=np.int64),
        treatment=t.astype(np.int64),
        covariate_schema=(("business", "binary"),),
        covariate_values=x.reshape(n, 1),
        mediator=m_counts,
        outcome=y_counts,
    )


@pytest.fixture(scope="module")
def components(default_dataset):
    return ab.fit_components(default_dataset, ["business"])


@pytest.fixture(scope="module")
def components_omitted(default_dataset):
    return ab.fit_components(default_dataset, [])


# ------------------------------------------------------------- fit_components

def test_nested_ols_identity(components, components_omitted):
    for comp in (components, components_omitted):
        implied = comp.rho_tilde * comp.sigma1 / comp.sigma2
        assert abs(comp.gamma_hat - implied) <= 1e-8 * abs(comp.gamma_hat)


def test_rho_tilde_positive_and_inflated_when_omitting(components, components_omitted):
    assert 0.0 < components.rho_tilde < 1.0
    assert abs(components_omitted.rho_tilde) > abs(components.rho_tilde)


def test_component_sigmas_positive(components):
    assert components.sigma1 > 0
    assert components.sigma2 > 0


def test_zero_residual_variance_errors():
    ds = make_dataset([0, 1, 0, 1, 0, 1], [0] * 6, [1] * 6, [0] * 6)
    with pytest.raises((NumericalError, EstimationError)):
        ab.fit_components(ds, [])


# ---------------------------------------------------------------- acme_of_rho

def test_acme_at_zero_is_coefficient_product(components):
    product = components.beta2 * components.gamma_hat
    assert abs(ab.acme_of_rho(components, 0.0) - product) <= 1e-8 * abs(product)


def test_acme_at_rho_tilde_is_zero(components):
    assert abs(ab.acme_of_rho(components, components.rho_tilde)) <= 1e-10


def test_acme_strictly_monotone(components):
    grid = ab.rho_grid()
    values = ab.acme_of_rho(components, grid)
    # beta2 > 0 here, so the curve strictly decreases in rho
    assert components.beta2 > 0
    assert np.all(np.diff(values) < 0)


def test_acme_domain_error(components):
    for rho in (-1.0, 1.0, 1.5):
        with pytest.raises(ConfigurationError, match="rho"):
            ab.acme_of_rho(components, rho)


def test_ade_is_total_minus_acme(components):
    grid = ab.rho_grid()
    acme = ab.acme_of_rho(components, grid)
    ade = ab.ade_of_rho(components, grid)
    assert np.array_equal(ade, components.tau_hat - acme)


def test_formula_recovers_truth_on_correlated_error_data():
    ds = correlated_error_dataset(seed=77, n=20_000)
    comp = ab.fit_components(ds, ["business"])
    # counts are scaled by 256, so the indirect effect is 2.0 * 256
    acme_at_truth = ab.acme_of_rho(comp, 0.5)
    assert abs(acme_at_truth / 256.0 - 2.0) < 0.1
    # away from the true rho the naive product is visibly biased
    assert abs(ab.acme_of_rho(comp, 0.0) / 256.0 - 2.0) > 0.2


# ---------------------------------------------------------------- zero_crossing

def test_zero_crossing_returns_rho_tilde(components):
    assert ab.zero_crossing(components) == pytest.approx(components.rho_tilde, abs=1e-10)


def test_zero_crossing_sign_pattern(components):
    assert components.beta2 * components.gamma_hat > 0
    assert ab.acme_of_rho(components, components.rho_tilde - 0.2) > 0
    assert ab.acme_of_rho(components, min(components.rho_tilde + 0.2, 0.99)) < 0


def test_zero_crossing_outside_grid_is_none(components):
    from dataclasses import replace

    far = replace(components, rho_tilde=0.95)
    assert ab.zero_crossing(far) is None
    assert ab.zero_crossing(far, grid_min=-0.99, grid_max=0.99) == pytest.approx(0.95)


# -------------------------------------------------------------------- rho_grid

def test_default_grid_has_19_points():
    grid = ab.rho_grid()
    assert grid.shape == (19,)
    assert grid[0] == pytest.approx(-0.9)
    assert grid[-1] == pytest.approx(0.9)
    assert np.all(np.diff(grid) > 0)


def test_grid_validation():
    with pytest.raises(ConfigurationError):
        ab.rho_grid(-1.0, 0.9, 0.1)
    with pytest.raises(ConfigurationError):
        ab.rho_grid(0.5, 0.4, 0.1)
    with pytest.raises(ConfigurationError):
        ab.rho_grid(-0.9, 0.9, 0.0)


# ------------------------------------------------------------ sensitivity_curve

@pytest.fixture(scope="module")
def small_curve(small_dataset):
    return ab.sensitivity_curve(small_dataset, ["business"], bootstrap_reps=100, seed=5)


def test_curve_has_19_rows_and_ordered_bands(small_curve):
    rows = small_curve.rows()
    assert len(rows) == 19
    for row in rows:
        assert row["acme_lo"] <= row["acme"] <= row["acme_hi"]
        assert row["ade_lo"] <= row["ade"] <= row["ade_hi"]


def test_curve_deterministic_and_worker_invariant(small_dataset):
    a = ab.sensitivity_curve(small_dataset, ["business"], bootstrap_reps=100, seed=6)
    b = ab.sensitivity_curve(small_dataset, ["business"], bootstrap_reps=100, seed=6)
    c = ab.sensitivity_curve(small_dataset, ["business"], bootstrap_reps=100, seed=6, n_workers=4)
    np.testing.assert_array_equal(a.acme_lo, b.acme_lo)
    np.testing.assert_array_equal(a.acme_lo, c.acme_lo)
    np.testing.assert_array_equal(a.ade_hi, c.ade_hi)


def test_curve_validates_inputs(small_dataset):
    with pytest.raises(ConfigurationError, match="bootstrap"):
        ab.sensitivity_curve(small_dataset, ["business"], bootstrap_reps=10, seed=1)
    with pytest.raises(ConfigurationError, match="rho"):
        ab.sensitivity_curve(small_dataset, ["business"], rho_values=np.array([0.5, 1.2]),
                             bootstrap_reps=100, seed=1)


def test_bootstrap_refit_paths_agree(small_dataset):
    from abmediate.sensitivity import (_component_arrays, _components_from_arrays,
                                       _components_from_counts)

    y, t, m, covs = _component_arrays(small_dataset, ("business",))
    Z = np.column_stack([np.ones(len(y)), t, *covs, m, y])
    idx = np.random.default_rng(3).integers(0, len(y), len(y))
    counts = np.bincount(idx, minlength=len(y)).astype(np.float64)
    via_rows = _components_from_arrays(y[idx], t[idx], m[idx], [c[idx] for c in covs],
                                       ("business",))
    via_counts = _components_from_counts(Z, counts, ("business",))
    for name in ("beta2", "sigma1", "sigma2", "rho_tilde", "tau_hat", "gamma_hat"):
        a, b = getattr(via_rows, name), getattr(via_counts, name)
        assert abs(a - b) <= 1e-8 * max(abs(a), 1e-12)


def test_excess_degenerate_resamples_raise():
    # the covariate marks a single unit, so ~37% of resamples drop it and
    # become rank deficient; the degenerate count crosses the 10% ceiling
    gen = np.random.default_rng(12)
    n = 50
    business = np.zeros(n)
    business[0] = 1.0
    bookings = gen.integers(1, 6, n)
    cancels = gen.integers(0, 2, n) * (bookings > 0)
    ds = ab.Dataset(
        unit_ids=np.arange(n, dtype=np.int64),
        treatment=np.tile([0, 1], n // 2).astype(np.int64),
        covariate_schema=(("business", "binary"),),
        covariate_values=business.reshape(n, 1),
        mediator=bookings.astype(np.int64),
        outcome=cancels.astype(np.int64),
    )
    with pytest.raises(EstimationError, match="degenerate"):
        ab.sensitivity_curve(ds, ["business"], bootstrap_reps=100, seed=2)


def test_full_data_rank_deficiency_is_numerical_error():
    ds = make_dataset([0, 1] * 30, [0] * 60, [1, 2] * 30, [0, 1] * 30)
    zero_cov = ab.Dataset(
        unit_ids=ds.unit_ids, treatment=ds.treatment,
        covariate_schema=(("business", "binary"),),
        covariate_values=np.zeros((60, 1)), mediator=ds.mediator, outcome=ds.outcome)
    with pytest.raises(NumericalError, match="rank deficient"):
        ab.sensitivity_curve(zero_cov, ["business"], bootstrap_reps=100, seed=2)


# -------------------------------------------------------------------- curve CSV

def test_curve_csv_format(small_curve):
    payload = sensitivity.grid_to_csv(small_curve).decode()
    lines = payload.strip().split("\n")
    assert lines[0] == "rho,acme,acme_lo,acme_hi,ade,ade_lo,ade_hi"
    assert len(lines) == 20
    first = lines[1].split(",")
    assert first[0] == "-0.900000"
    assert all(len(v.split(".")[-1]) == 6 for v in first)
    rhos = [float(line.split(",")[0]) for line in lines[1:]]
    assert rhos == sorted(rhos)
