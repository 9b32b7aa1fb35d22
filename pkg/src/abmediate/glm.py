"""Generalized linear models fitted by iteratively reweighted least squares.

Three families cover both stages of the mediation estimator:

* ``gaussian-identity``  — ordinary least squares (one IRLS step).
* ``poisson-log``        — counts with a log link.
* ``binomial-logit``     — success counts out of a per-row trial count
  (the trial count is itself a model column, e.g. bookings for a
  cancellations-out-of-bookings outcome). Rows with zero trials carry no
  likelihood information and are masked out of the fit.

Weighted least-squares steps use a QR factorization; the coefficient
covariance is the inverse of the final weighted cross-product times the
dispersion (estimated for gaussian, fixed at 1 otherwise). Fits are pure
functions of their inputs: refitting the same design is bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import erfc, sqrt

import numpy as np
from scipy.special import expit, gammaln, xlogy

from .dataset import Dataset
from .errors import ConfigurationError, NumericalError

GAUSSIAN = "gaussian-identity"
POISSON = "poisson-log"
BINOMIAL = "binomial-logit"
FAMILIES = (GAUSSIAN, POISSON, BINOMIAL)

INTERCEPT = "1"
TRIALS_SIMULATED = "mediator"         # trials follow the simulated mediator
TRIALS_OBSERVED = "mediator_observed"  # trials stay pinned to observed bookings

_RANK_TOL = 1e-10
_SEPARATION_BOUND = 30.0


def term_factors(term: str) -> tuple[str, ...]:
    """Split a term like 'treatment:business' into its column factors."""
    if term == INTERCEPT:
        return ()
    return tuple(term.split(":"))


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of one stage model.

    ``terms`` are column roles or ':'-joined pairwise products, intercept
    ('1') first. ``trials`` names the binomial trial column and is only
    valid for the binomial family.
    """

    response: str
    terms: tuple[str, ...]
    family: str
    trials: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.response not in ("mediator", "outcome"):
            raise ConfigurationError(f"response must be 'mediator' or 'outcome', got {self.response!r}")
        if not self.terms or self.terms[0] != INTERCEPT:
            raise ConfigurationError("terms must start with the intercept '1'")
        if len(set(self.terms)) != len(self.terms):
            raise ConfigurationError("duplicate terms in model spec")
        if self.response == "mediator":
            for term in self.terms:
                if "mediator" in term_factors(term):
                    raise ConfigurationError("the mediator model may not contain mediator terms")
        if self.trials is not None:
            if self.family != BINOMIAL:
                raise ConfigurationError("trials are only meaningful for the binomial family")
            if self.trials not in (TRIALS_SIMULATED, TRIALS_OBSERVED):
                raise ConfigurationError(
                    f"trials must be {TRIALS_SIMULATED!r} or {TRIALS_OBSERVED!r}, got {self.trials!r}")
        if self.family == BINOMIAL and self.trials is None:
            raise ConfigurationError("binomial-logit requires a trials column")


def _interaction_terms(covariates: tuple[str, ...]) -> tuple[str, ...]:
    return tuple(f"treatment:{name}" for name in covariates)


def mediator_model(covariates: tuple[str, ...] | list[str], family: str = POISSON,
                   interactions: bool = True) -> ModelSpec:
    """Stage-1 spec: bookings on treatment and covariates."""
    covariates = tuple(covariates)
    terms = (INTERCEPT, "treatment") + covariates
    if interactions:
        terms += _interaction_terms(covariates)
    return ModelSpec(response="mediator", terms=terms, family=family)


def outcome_model(covariates: tuple[str, ...] | list[str], family: str = BINOMIAL,
                  interactions: bool = True, trials: str = TRIALS_SIMULATED) -> ModelSpec:
    """Stage-2 spec: cancellations on treatment and covariates.

    Binomial fits take bookings as the trial count; gaussian and poisson
    fits include the mediator as a linear term instead.
    """
    covariates = tuple(covariates)
    terms = (INTERCEPT, "treatment")
    if family != BINOMIAL:
        terms += ("mediator",)
    terms += covariates
    if interactions:
        terms += _interaction_terms(covariates)
    return ModelSpec(response="outcome", terms=terms, family=family,
                     trials=trials if family == BINOMIAL else None)


@dataclass(frozen=True)
class DesignMatrix:
    """Dense design with response, optional trials, and a fit-row mask."""

    spec: ModelSpec
    columns: tuple[str, ...]
    values: np.ndarray
    response: np.ndarray
    trials: np.ndarray | None
    mask: np.ndarray

    @property
    def n_rows(self) -> int:
        return int(self.values.shape[0])


def _resolve_term(dataset: Dataset, term: str, overrides: dict | None = None) -> np.ndarray:
    n = dataset.n_units
    if term == INTERCEPT:
        return np.ones(n, dtype=np.float64)
    out = np.ones(n, dtype=np.float64)
    for factor in term_factors(term):
        if overrides and factor in overrides:
            col = np.broadcast_to(np.asarray(overrides[factor], dtype=np.float64), (n,))
        else:
            col = dataset.column(factor)
        out = out * col
    return out


def build_design(dataset: Dataset, spec: ModelSpec) -> DesignMatrix:
    """Materialize a spec against a dataset.

    Product terms are computed row-wise; for binomial-with-trials, rows
    with zero trials are masked out of the fit (zero likelihood weight).
    """
    values = np.column_stack([_resolve_term(dataset, term) for term in spec.terms])
    response = dataset.column(spec.response)
    trials = None
    mask = np.ones(dataset.n_units, dtype=bool)
    if spec.trials is not None:
        trials = dataset.column("mediator")
        mask = trials > 0
    return DesignMatrix(spec=spec, columns=tuple(spec.terms), values=values,
                        response=response, trials=trials, mask=mask)


@dataclass
class FittedGlm:
    """A converged (or diagnosed) IRLS fit; treat as immutable.

    ``covariance`` is the inverse observed information scaled by the
    dispersion; ``residual_sd`` is only set for gaussian fits. The
    Cholesky factor of the covariance is computed once on construction
    and reused by every parameter draw.
    """

    spec: ModelSpec
    columns: tuple[str, ...]
    coefficients: np.ndarray
    covariance: np.ndarray
    dispersion: float
    log_likelihood: float
    n_iterations: int
    converged: bool
    residuals: np.ndarray
    residual_sd: float | None
    n_obs: int
    _scale: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._scale = _covariance_factor(self.covariance)

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self._index(name)])

    def std_error(self, name: str) -> float:
        j = self._index(name)
        return sqrt(float(self.covariance[j, j]))

    def _index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise ConfigurationError(f"no coefficient {name!r}; model has {list(self.columns)}") from None


def _covariance_factor(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular factor L with L L' = cov, with a small jitter fallback."""
    sym = 0.5 * (cov + cov.T)
    if not np.any(sym):
        return np.zeros_like(sym)
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        pass
    p = sym.shape[0]
    jitter = 1e-12 * float(np.trace(sym)) / p
    try:
        return np.linalg.cholesky(sym + jitter * np.eye(p))
    except np.linalg.LinAlgError:
        raise NumericalError("coefficient covariance is not positive semidefinite "
                             f"(jitter {jitter:.3e} did not help)") from None


def _check_rank(weighted: np.ndarray, columns: tuple[str, ...]) -> None:
    singular = np.linalg.svd(weighted, compute_uv=False)
    if singular[0] == 0 or singular[-1] / singular[0] < _RANK_TOL:
        _, _, vt = np.linalg.svd(weighted)
        null = np.abs(vt[-1])
        involved = [columns[j] for j in np.nonzero(null > 0.1)[0]]
        raise NumericalError(f"design matrix is rank deficient; collinear columns: {involved}")


def _family_state(family: str, eta: np.ndarray, y: np.ndarray, trials: np.ndarray | None):
    """Mean, IRLS weights, working response, and deviance at eta."""
    if family == GAUSSIAN:
        mu = eta
        return mu, np.ones_like(eta), y, float(np.sum((y - mu) ** 2))
    if family == POISSON:
        mu = np.exp(eta)
        dev = 2.0 * float(np.sum(xlogy(y, y / np.where(mu > 0, mu, 1.0)) - (y - mu)))
        return mu, mu, eta + (y - mu) / mu, dev
    pi = expit(eta)
    mu = trials * pi
    w = trials * pi * (1.0 - pi)
    dev = 2.0 * float(np.sum(
        xlogy(y, np.where(y > 0, y, 1.0) / np.where(mu > 0, mu, 1.0))
        + xlogy(trials - y, np.where(trials - y > 0, trials - y, 1.0)
                / np.where(trials - mu > 0, trials - mu, 1.0))))
    return mu, w, eta + (y - mu) / np.where(w > 0, w, 1.0), dev


def _initial_coefficients(family: str, p: int, y: np.ndarray, trials: np.ndarray | None) -> np.ndarray:
    beta = np.zeros(p)
    if family == POISSON:
        beta[0] = np.log(max(float(y.mean()), 1e-8))
    elif family == BINOMIAL:
        rate = float(y.sum()) / float(trials.sum())
        rate = min(max(rate, 1e-8), 1.0 - 1e-8)
        beta[0] = np.log(rate / (1.0 - rate))
    return beta


def fit_irls(design: DesignMatrix, max_iter: int = 100, tol: float = 1e-8) -> FittedGlm:
    """Maximize the family likelihood; converge on relative deviance change.

    Raises NumericalError on rank deficiency (naming the collinear
    columns), on logit separation (|coefficient| drifting past 30), and on
    non-convergence (carrying the last iterate).
    """
    spec = design.spec
    X = design.values[design.mask]
    y = design.response[design.mask]
    trials = design.trials[design.mask] if design.trials is not None else None
    n, p = X.shape
    if n <= p:
        raise NumericalError(f"need more rows than columns to fit ({n} rows, {p} columns)")

    def solve_weighted(weights: np.ndarray, working: np.ndarray) -> np.ndarray:
        sw = np.sqrt(weights)
        weighted = sw[:, None] * X
        q, r = np.linalg.qr(weighted)
        diag = np.abs(np.diag(r))
        # An unpivoted QR of a (near-)singular matrix leaves a tiny R diagonal;
        # confirm against the singular-value criterion and name the columns.
        if diag.min() < 1e-8 * max(diag.max(), 1.0):
            _check_rank(weighted, design.columns)
        return np.linalg.solve(r, q.T @ (sw * working))

    if spec.family == GAUSSIAN:
        # Identity link with unit weights: a single least-squares solve is exact.
        beta = solve_weighted(np.ones(n), y)
        n_iter = 1
        converged = True
    else:
        beta = _initial_coefficients(spec.family, p, y, trials)
        deviance = np.inf
        n_iter = 0
        converged = False
        for n_iter in range(1, max_iter + 1):
            mu, w, z, new_deviance = _family_state(spec.family, X @ beta, y, trials)
            beta = solve_weighted(w, z)
            if spec.family == BINOMIAL and np.max(np.abs(beta)) > _SEPARATION_BOUND:
                raise NumericalError("logit separation: coefficients diverged beyond "
                                     f"|beta| > {_SEPARATION_BOUND}", last_coefficients=beta)
            if abs(deviance - new_deviance) <= tol * (abs(new_deviance) + 1e-8):
                deviance = new_deviance
                converged = True
                break
            deviance = new_deviance
        if not converged:
            raise NumericalError(f"IRLS did not converge in {max_iter} iterations",
                                 last_coefficients=beta)

    mu, w, _, deviance = _family_state(spec.family, X @ beta, y, trials)
    info = X.T @ (w[:, None] * X)
    try:
        unscaled = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise NumericalError("weighted cross-product is singular at the optimum") from None

    if spec.family == GAUSSIAN:
        dispersion = deviance / (n - p)
        if dispersion <= 0.0:
            raise NumericalError("zero residual variance: the gaussian fit is exact",
                                 last_coefficients=beta)
        residual_sd = sqrt(dispersion)
    else:
        dispersion = 1.0
        residual_sd = None
    covariance = dispersion * unscaled
    covariance = 0.5 * (covariance + covariance.T)

    residuals = np.zeros(design.n_rows)
    eta_all = design.values @ beta
    if spec.family == GAUSSIAN:
        fitted = eta_all
    elif spec.family == POISSON:
        fitted = np.exp(eta_all)
    else:
        fitted = design.trials * expit(eta_all)
    residuals[design.mask] = (design.response - fitted)[design.mask]

    return FittedGlm(
        spec=spec,
        columns=design.columns,
        coefficients=beta,
        covariance=covariance,
        dispersion=float(dispersion),
        log_likelihood=log_likelihood_at(design, beta, dispersion=dispersion),
        n_iterations=n_iter,
        converged=converged,
        residuals=residuals,
        residual_sd=residual_sd,
        n_obs=int(n),
    )


def log_likelihood_at(design: DesignMatrix, beta: np.ndarray, dispersion: float = 1.0) -> float:
    """Family log-likelihood at arbitrary coefficients (masked rows excluded)."""
    X = design.values[design.mask]
    y = design.response[design.mask]
    eta = X @ beta
    family = design.spec.family
    if family == GAUSSIAN:
        if dispersion <= 0.0:
            raise NumericalError("gaussian log-likelihood needs a positive dispersion")
        rss = float(np.sum((y - eta) ** 2))
        n = X.shape[0]
        return -0.5 * (n * np.log(2.0 * np.pi * dispersion) + rss / dispersion)
    if family == POISSON:
        mu = np.exp(eta)
        return float(np.sum(y * eta - mu - gammaln(y + 1.0)))
    trials = design.trials[design.mask]
    log_pi = -np.logaddexp(0.0, -eta)
    log_one_minus_pi = -np.logaddexp(0.0, eta)
    return float(np.sum(
        gammaln(trials + 1.0) - gammaln(y + 1.0) - gammaln(trials - y + 1.0)
        + y * log_pi + (trials - y) * log_one_minus_pi
    ))


def score_at(design: DesignMatrix, beta: np.ndarray, dispersion: float = 1.0) -> np.ndarray:
    """Gradient of log_likelihood_at with respect to the coefficients."""
    X = design.values[design.mask]
    y = design.response[design.mask]
    eta = X @ beta
    family = design.spec.family
    if family == GAUSSIAN:
        return X.T @ (y - eta) / dispersion
    if family == POISSON:
        return X.T @ (y - np.exp(eta))
    trials = design.trials[design.mask]
    return X.T @ (y - trials * expit(eta))


def draw_params(fit: FittedGlm, rng_substream: np.random.Generator) -> np.ndarray:
    """One multivariate-normal draw centered at the fitted coefficients."""
    z = rng_substream.standard_normal(fit.coefficients.shape[0])
    return fit.coefficients + fit._scale @ z


def sample_response(family: str, means: np.ndarray, trials: np.ndarray | None,
                    rng_substream: np.random.Generator, scale: float | None = None) -> np.ndarray:
    """Independent draws from the family distribution, one per element.

    ``means`` are Poisson rates, binomial per-trial probabilities, or
    gaussian means (with ``scale`` as the standard deviation).
    """
    means = np.asarray(means, dtype=np.float64)
    if not np.all(np.isfinite(means)):
        raise NumericalError("non-finite means passed to sample_response")
    if family == POISSON:
        if np.any(means < 0):
            raise NumericalError("poisson means must be non-negative")
        return rng_substream.poisson(means)
    if family == BINOMIAL:
        if np.any((means < 0) | (means > 1)):
            raise NumericalError("binomial probabilities must lie in [0, 1]")
        return rng_substream.binomial(trials.astype(np.int64), means)
    if family == GAUSSIAN:
        if scale is None or scale < 0:
            raise NumericalError("gaussian sampling needs a non-negative scale")
        return means + scale * rng_substream.standard_normal(means.shape[0])
    raise ConfigurationError(f"unknown family {family!r}")


@dataclass(frozen=True)
class WaldTest:
    z: float
    p_value: float
    std_error: float


def wald_test(fit: FittedGlm, coefficient: str) -> WaldTest:
    """Two-sided normal test of a single coefficient against zero."""
    se = fit.std_error(coefficient)
    if se == 0.0:
        raise NumericalError(f"coefficient {coefficient!r} has zero variance")
    z = fit.coefficient(coefficient) / se
    return WaldTest(z=z, p_value=erfc(abs(z) / sqrt(2.0)), std_error=se)


def predict_mean(fit: FittedGlm, dataset: Dataset, overrides: dict | None = None,
                 params: np.ndarray | None = None) -> np.ndarray:
    """Per-row mean response, with optional column overrides.

    Overrides map column roles to scalars or per-row vectors and are
    applied before the linear predictor is built (product terms are
    recomputed). Binomial fits return expected counts, trials times
    probability; a 'mediator' trials column follows a mediator override,
    a 'mediator_observed' one stays at the observed bookings. ``params``
    substitutes a coefficient vector (e.g. a posterior draw) for the
    fitted one.
    """
    beta = fit.coefficients if params is None else np.asarray(params, dtype=np.float64)
    if overrides:
        known = {"treatment", "mediator", "outcome", *dataset.covariate_names}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigurationError(f"overrides reference unknown columns: {sorted(unknown)}")
    values = np.column_stack([_resolve_term(dataset, term, overrides) for term in fit.spec.terms])
    eta = values @ beta
    family = fit.spec.family
    if family == GAUSSIAN:
        return eta
    if family == POISSON:
        return np.exp(eta)
    if fit.spec.trials == TRIALS_SIMULATED and overrides and "mediator" in overrides:
        trials = np.broadcast_to(np.asarray(overrides["mediator"], dtype=np.float64), (dataset.n_units,))
    else:
        trials = dataset.column("mediator")
    return trials * expit(eta)
