"""Sensitivity of the mediation decomposition to unobserved confounding.

An unmeasured confounder of the bookings/cancellations relationship shows
up as a correlation rho between the error terms of the two linear stage
models. For the linear structural pair the indirect effect has a closed
form in rho and in quantities identified from three OLS fits sharing one
regressor set:

    total effect:  Y ~ [1, T, X...]   -> tau_hat, residual sd sigma1
    mediator:      M ~ [1, T, X...]   -> beta2,   residual sd sigma2
    outcome:       Y ~ [1, T, M, X...] -> gamma_hat (mediator coefficient)

    ACME(rho) = beta2 * (sigma1 / sigma2)
                * (rho_tilde - rho * sqrt((1 - rho_tilde^2) / (1 - rho^2)))

where rho_tilde is the sample correlation of the two stage-1 residual
vectors. ACME(0) equals beta2 * gamma_hat (nested-OLS identity
gamma_hat = rho_tilde * sigma1 / sigma2), the curve crosses zero exactly
at rho = rho_tilde, and ADE(rho) is tau_hat - ACME(rho). The formula is
validated in the test suite against data generated with a known error
correlation, not just against its own algebra.

The analytic form is exact only for linear stages, so this module always
fits gaussian regressions regardless of the stage families used for the
headline mediation estimates; grid metadata records that.

Uncertainty bands come from a nonparametric bootstrap over units, one
substream per resample, so bands are deterministic for a fixed seed and
invariant to worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import glm, rng
from .dataset import Dataset
from .errors import ConfigurationError, EstimationError, NumericalError
from .mediate import percentile_interval

DEFAULT_RHO_MIN = -0.9
DEFAULT_RHO_MAX = 0.9
DEFAULT_RHO_STEP = 0.1
DEFAULT_BOOTSTRAP = 500
MIN_BOOTSTRAP = 100
_MAX_REDRAWS_PER_RESAMPLE = 10

CURVE_CSV_HEADER = "rho,acme,acme_lo,acme_hi,ade,ade_lo,ade_hi"


@dataclass(frozen=True)
class SensitivityComponents:
    """Identified quantities feeding the ACME(rho) formula."""

    beta2: float
    sigma1: float
    sigma2: float
    rho_tilde: float
    tau_hat: float
    gamma_hat: float
    n_units: int
    covariates: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"beta2": self.beta2, "sigma1": self.sigma1, "sigma2": self.sigma2,
                "rho_tilde": self.rho_tilde, "tau_hat": self.tau_hat,
                "gamma_hat": self.gamma_hat, "n_units": self.n_units,
                "covariates": list(self.covariates)}


@dataclass(frozen=True)
class SensitivityGrid:
    """ACME/ADE over a rho grid with bootstrap percentile bands."""

    rho_values: np.ndarray
    acme: np.ndarray
    acme_lo: np.ndarray
    acme_hi: np.ndarray
    ade: np.ndarray
    ade_lo: np.ndarray
    ade_hi: np.ndarray
    bootstrap_reps: int
    seed: int
    ci_level: float
    components: SensitivityComponents
    degenerate_resamples: int
    stage_family: str = glm.GAUSSIAN

    def rows(self) -> list[dict]:
        return [
            {"rho": float(self.rho_values[i]),
             "acme": float(self.acme[i]), "acme_lo": float(self.acme_lo[i]),
             "acme_hi": float(self.acme_hi[i]),
             "ade": float(self.ade[i]), "ade_lo": float(self.ade_lo[i]),
             "ade_hi": float(self.ade_hi[i])}
            for i in range(self.rho_values.shape[0])
        ]


def _component_arrays(dataset: Dataset, covariate_names: tuple[str, ...]):
    y = dataset.column("outcome")
    m = dataset.column("mediator")
    t = dataset.column("treatment")
    covs = [dataset.covariate(name).astype(np.float64) for name in covariate_names]
    return y, t, m, covs


def _fit_gaussian(response_role: str, y: np.ndarray, columns: list[np.ndarray],
                  names: tuple[str, ...]) -> glm.FittedGlm:
    spec = glm.ModelSpec(response=response_role, terms=names, family=glm.GAUSSIAN)
    design = glm.DesignMatrix(
        spec=spec, columns=names,
        values=np.column_stack(columns),
        response=y, trials=None,
        mask=np.ones(y.shape[0], dtype=bool),
    )
    return glm.fit_irls(design)


def _components_from_arrays(y, t, m, covs, covariate_names) -> SensitivityComponents:
    n = y.shape[0]
    ones = np.ones(n)
    base_cols = [ones, t, *covs]
    base_names = (glm.INTERCEPT, "treatment") + tuple(covariate_names)

    total = _fit_gaussian("outcome", y, base_cols, base_names)
    mediator = _fit_gaussian("mediator", m, base_cols, base_names)
    outcome = _fit_gaussian("outcome", y, [ones, t, m, *covs],
                            (glm.INTERCEPT, "treatment", "mediator") + tuple(covariate_names))

    e1 = total.residuals
    e2 = mediator.residuals
    ss1 = float(e1 @ e1)
    ss2 = float(e2 @ e2)
    if ss1 <= 0.0 or ss2 <= 0.0:
        raise NumericalError("zero residual variance; sensitivity components are undefined")
    return SensitivityComponents(
        beta2=mediator.coefficient("treatment"),
        sigma1=total.residual_sd,
        sigma2=mediator.residual_sd,
        rho_tilde=float(e1 @ e2) / np.sqrt(ss1 * ss2),
        tau_hat=total.coefficient("treatment"),
        gamma_hat=outcome.coefficient("mediator"),
        n_units=n,
        covariates=tuple(covariate_names),
    )


def _components_from_counts(Z: np.ndarray, counts: np.ndarray,
                            covariate_names: tuple[str, ...]) -> SensitivityComponents:
    """Components for a resample given per-unit multiplicities.

    Resampling units with replacement is count-weighted least squares, so
    every component is a closed form in the weighted moment matrix of
    ``Z = [1, T, X..., M, Y]``; this is the refit of
    ``_components_from_arrays`` computed without materializing the
    resampled rows (the redundant-route test pins the two together).
    """
    k = Z.shape[1]
    gram = Z.T @ (Z * counts[:, None])
    base = list(range(k - 2))      # intercept, treatment, covariates
    m_idx, y_idx = k - 2, k - 1
    n = gram[0, 0]
    p = len(base)
    if n <= p + 1:
        raise NumericalError("resample too small for the component regressions")
    gram_base = gram[np.ix_(base, base)]
    try:
        chol = np.linalg.cholesky(gram_base)
    except np.linalg.LinAlgError:
        raise NumericalError("resample design is rank deficient") from None
    if np.diag(chol).min() < 1e-8 * np.diag(chol).max():
        raise NumericalError("resample design is numerically rank deficient")

    def base_solve(rhs):
        return np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))

    b1 = base_solve(gram[base, y_idx])
    b2 = base_solve(gram[base, m_idx])
    outcome_cols = base + [m_idx]
    try:
        b3 = np.linalg.solve(gram[np.ix_(outcome_cols, outcome_cols)], gram[outcome_cols, y_idx])
    except np.linalg.LinAlgError:
        raise NumericalError("resample outcome regression is rank deficient") from None

    # At the optimum, residual (cross-)sums reduce to moment identities:
    # e1'e1 = y'y - b1'X'y, e1'e2 = y'm - b1'X'm, e2'e2 = m'm - b2'X'm.
    ss1 = float(gram[y_idx, y_idx] - b1 @ gram[base, y_idx])
    ss2 = float(gram[m_idx, m_idx] - b2 @ gram[base, m_idx])
    s12 = float(gram[y_idx, m_idx] - b1 @ gram[base, m_idx])
    if ss1 <= 0.0 or ss2 <= 0.0:
        raise NumericalError("zero residual variance in a resample")
    dof = n - p
    return SensitivityComponents(
        beta2=float(b2[1]),
        sigma1=float(np.sqrt(ss1 / dof)),
        sigma2=float(np.sqrt(ss2 / dof)),
        rho_tilde=s12 / float(np.sqrt(ss1 * ss2)),
        tau_hat=float(b1[1]),
        gamma_hat=float(b3[-1]),
        n_units=int(round(n)),
        covariates=tuple(covariate_names),
    )


def fit_components(dataset: Dataset, covariate_names: list[str] | tuple[str, ...] = ()) -> SensitivityComponents:
    """Fit the three component regressions on identical covariate sets."""
    if dataset.n_units == 0:
        raise EstimationError("cannot fit sensitivity components on an empty dataset")
    covariate_names = tuple(covariate_names)
    y, t, m, covs = _component_arrays(dataset, covariate_names)
    return _components_from_arrays(y, t, m, covs, covariate_names)


def acme_of_rho(components: SensitivityComponents, rho) -> float | np.ndarray:
    """Indirect effect per visitor at error correlation rho, |rho| < 1."""
    rho_arr = np.asarray(rho, dtype=np.float64)
    if np.any(np.abs(rho_arr) >= 1.0):
        raise ConfigurationError("rho must lie strictly inside (-1, 1)")
    c = components
    value = c.beta2 * (c.sigma1 / c.sigma2) * (
        c.rho_tilde - rho_arr * np.sqrt((1.0 - c.rho_tilde**2) / (1.0 - rho_arr**2)))
    return float(value) if np.isscalar(rho) else value


def ade_of_rho(components: SensitivityComponents, rho) -> float | np.ndarray:
    """Direct effect per visitor at rho: the total effect minus ACME(rho)."""
    return components.tau_hat - acme_of_rho(components, rho)


def zero_crossing(components: SensitivityComponents,
                  grid_min: float = DEFAULT_RHO_MIN,
                  grid_max: float = DEFAULT_RHO_MAX) -> float | None:
    """The rho at which ACME(rho) = 0, i.e. rho_tilde; None if outside the grid."""
    if grid_min <= components.rho_tilde <= grid_max:
        return components.rho_tilde
    return None


def rho_grid(rho_min: float = DEFAULT_RHO_MIN, rho_max: float = DEFAULT_RHO_MAX,
             rho_step: float = DEFAULT_RHO_STEP) -> np.ndarray:
    """Ascending rho grid, strictly inside (-1, 1)."""
    if rho_step <= 0:
        raise ConfigurationError("rho_step must be positive")
    if rho_min > rho_max:
        raise ConfigurationError("rho_min must not exceed rho_max")
    if rho_min <= -1.0 or rho_max >= 1.0:
        raise ConfigurationError("the rho grid must lie strictly inside (-1, 1)")
    count = int(round((rho_max - rho_min) / rho_step)) + 1
    grid = rho_min + rho_step * np.arange(count)
    return grid[grid <= rho_max + 1e-12]


def sensitivity_curve(dataset: Dataset, covariate_names: list[str] | tuple[str, ...] = (),
                      rho_values: np.ndarray | None = None,
                      bootstrap_reps: int = DEFAULT_BOOTSTRAP, seed: int = 0,
                      ci_level: float = 0.95, n_workers: int = 1) -> SensitivityGrid:
    """ACME/ADE curves over the grid with unit-bootstrap percentile bands.

    Rank-deficient resamples are redrawn from the same substream and
    counted; more than 10% degenerate resamples aborts the run.
    """
    seed = rng.check_seed(seed)
    if bootstrap_reps < MIN_BOOTSTRAP:
        raise ConfigurationError(f"bootstrap_reps must be >= {MIN_BOOTSTRAP} for bands")
    if not 0.0 < ci_level < 1.0:
        raise ConfigurationError("ci_level must lie strictly inside (0, 1)")
    if n_workers < 1:
        raise ConfigurationError("n_workers must be >= 1")
    grid = rho_grid() if rho_values is None else np.asarray(rho_values, dtype=np.float64)
    if grid.size == 0:
        raise ConfigurationError("empty rho grid")
    if np.any(np.abs(grid) >= 1.0):
        raise ConfigurationError("the rho grid must lie strictly inside (-1, 1)")
    if np.any(np.diff(grid) <= 0):
        raise ConfigurationError("rho grid must be strictly ascending")

    covariate_names = tuple(covariate_names)
    components = fit_components(dataset, covariate_names)
    acme = acme_of_rho(components, grid)
    ade = components.tau_hat - acme

    y, t, m, covs = _component_arrays(dataset, covariate_names)
    n = dataset.n_units
    Z = np.column_stack([np.ones(n), t, *covs, m, y])
    boot_acme = np.empty((bootstrap_reps, grid.size))
    boot_ade = np.empty((bootstrap_reps, grid.size))
    degenerate = np.zeros(bootstrap_reps, dtype=np.int64)

    def run_resample(b: int) -> None:
        generator = rng.substream(seed, rng.STREAM_BOOTSTRAP, b)
        for attempt in range(_MAX_REDRAWS_PER_RESAMPLE):
            idx = generator.integers(0, n, n)
            counts = np.bincount(idx, minlength=n).astype(np.float64)
            try:
                comp = _components_from_counts(Z, counts, covariate_names)
            except NumericalError:
                degenerate[b] += 1
                continue
            boot_acme[b] = acme_of_rho(comp, grid)
            boot_ade[b] = comp.tau_hat - boot_acme[b]
            return
        raise EstimationError(
            f"bootstrap resample {b} stayed rank deficient after {_MAX_REDRAWS_PER_RESAMPLE} redraws")

    if n_workers == 1:
        for b in range(bootstrap_reps):
            run_resample(b)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run_resample, range(bootstrap_reps)))

    total_degenerate = int(degenerate.sum())
    if total_degenerate > 0.1 * bootstrap_reps:
        raise EstimationError(
            f"{total_degenerate} of {bootstrap_reps} bootstrap resamples were degenerate")

    lo_hi = [percentile_interval(boot_acme[:, i], ci_level) for i in range(grid.size)]
    ade_lo_hi = [percentile_interval(boot_ade[:, i], ci_level) for i in range(grid.size)]
    return SensitivityGrid(
        rho_values=grid,
        acme=np.asarray(acme), acme_lo=np.array([v[0] for v in lo_hi]),
        acme_hi=np.array([v[1] for v in lo_hi]),
        ade=np.asarray(ade), ade_lo=np.array([v[0] for v in ade_lo_hi]),
        ade_hi=np.array([v[1] for v in ade_lo_hi]),
        bootstrap_reps=bootstrap_reps, seed=seed, ci_level=ci_level,
        components=components, degenerate_resamples=total_degenerate,
    )


def grid_to_csv(grid: SensitivityGrid) -> bytes:
    """Plot-ready CSV: fixed header, ascending rho, 6-decimal fixed formatting."""
    lines = [CURVE_CSV_HEADER]
    for row in grid.rows():
        lines.append(",".join(f"{row[key]:.6f}" for key in
                              ("rho", "acme", "acme_lo", "acme_hi", "ade", "ade_lo", "ade_hi")))
    return ("\n".join(lines) + "\n").encode("utf-8")
