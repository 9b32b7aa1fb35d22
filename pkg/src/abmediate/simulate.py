"""Synthetic experiment generator.

Each visitor draws, in a fixed order from its own SplitMix64 substream
(see rng.py): treatment arm, binary covariate, a Poisson booking count,
then one cancellation Bernoulli per booking. Because every unit owns its
substream, generation can be partitioned across workers without changing
a single draw, and the same (config, seed) pair always yields an
identical dataset.

Poisson counts come from CDF inversion of a single uniform; cancellation
counts are sums of per-booking Bernoulli draws. Both are exact and fast
at the booking rates used here.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import rng
from .dataset import Dataset, KIND_BINARY
from .errors import ConfigurationError, NumericalError

_U64 = np.uint64

DEFAULT_N_UNITS = 100_000


@dataclass(frozen=True)
class CellParams:
    """Booking/cancellation process for one (treatment, covariate) cell."""

    booking_rate: float
    cancel_prob: float


@dataclass(frozen=True)
class ScenarioConfig:
    """Data-generating process for a two-arm experiment with one binary covariate."""

    n_units: int = DEFAULT_N_UNITS
    p_treatment: float = 0.5
    covariate_name: str = "business"
    p_covariate: float = 0.4
    cells: dict[tuple[int, int], CellParams] | None = None
    exact_split: bool = False

    def validate(self) -> None:
        if self.n_units < 0:
            raise ConfigurationError("n_units must be non-negative")
        for name in ("p_treatment", "p_covariate"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {p}")
        if not self.covariate_name or not self.covariate_name.isidentifier():
            raise ConfigurationError(f"covariate_name {self.covariate_name!r} is not a valid column name")
        if self.cells is None or set(self.cells) != {(0, 0), (0, 1), (1, 0), (1, 1)}:
            raise ConfigurationError("cells must define all four (treatment, covariate) combinations")
        for key, params in self.cells.items():
            if params.booking_rate < 0:
                raise ConfigurationError(f"cell {key}: booking_rate must be >= 0")
            if not 0.0 <= params.cancel_prob <= 1.0:
                raise ConfigurationError(f"cell {key}: cancel_prob must lie in [0, 1]")


def default_scenario() -> ScenarioConfig:
    """The stock booking/cancellation scenario.

    100,000 visitors, half treated; 40% carry the 'business' covariate.
    Everyone books at Poisson rate 1 except treated business visitors,
    who book at rate 3. Cancellation probability per booking is 0.07 for
    non-business and 0.14 for business visitors in both arms, so the
    treatment moves cancellations only through bookings.
    """
    return ScenarioConfig(
        cells={
            (0, 0): CellParams(booking_rate=1.0, cancel_prob=0.07),
            (0, 1): CellParams(booking_rate=1.0, cancel_prob=0.14),
            (1, 0): CellParams(booking_rate=1.0, cancel_prob=0.07),
            (1, 1): CellParams(booking_rate=3.0, cancel_prob=0.14),
        },
    )


def scenario_to_dict(config: ScenarioConfig) -> dict:
    """JSON-ready form of a scenario (the scenario file schema)."""
    doc = {
        "n_units": config.n_units,
        "p_treatment": config.p_treatment,
        "covariate_name": config.covariate_name,
        "p_covariate": config.p_covariate,
        "cells": [
            {"treatment": t, "covariate": x,
             "booking_rate": config.cells[(t, x)].booking_rate,
             "cancel_prob": config.cells[(t, x)].cancel_prob}
            for (t, x) in sorted(config.cells)
        ],
    }
    if config.exact_split:
        doc["exact_split"] = True
    return doc


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    try:
        cells = {(int(c["treatment"]), int(c["covariate"])):
                 CellParams(float(c["booking_rate"]), float(c["cancel_prob"]))
                 for c in doc["cells"]}
        config = ScenarioConfig(
            n_units=int(doc["n_units"]),
            p_treatment=float(doc["p_treatment"]),
            covariate_name=str(doc["covariate_name"]),
            p_covariate=float(doc["p_covariate"]),
            cells=cells,
            exact_split=bool(doc.get("exact_split", False)),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigurationError(f"malformed scenario config: {err}") from None
    config.validate()
    return config


def load_scenario(path) -> ScenarioConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"scenario config {path}: invalid JSON ({err})") from None
    return scenario_from_dict(doc)


def _poisson_by_inversion(lam: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Smallest k with CDF(k) > u, per element."""
    counts = np.zeros(lam.shape[0], dtype=np.int64)
    pmf = np.exp(-lam)
    cdf = pmf.copy()
    active = u >= cdf
    # Far beyond any realistic quantile for the given rates.
    limit = int(np.ceil(lam.max() + 12.0 * np.sqrt(lam.max() + 1.0) + 60.0)) if lam.size else 0
    iterations = 0
    while np.any(active):
        iterations += 1
        if iterations > limit:
            raise NumericalError("Poisson inversion did not terminate; booking_rate too large")
        counts[active] += 1
        pmf = np.where(active, pmf * lam / iterations, pmf)
        cdf = np.where(active, cdf + pmf, cdf)
        active &= u >= cdf
    return counts


def _generate_chunk(config: ScenarioConfig, seed: int, start: int, stop: int,
                    treatment: np.ndarray | None) -> tuple[np.ndarray, ...]:
    keys = rng.unit_keys(seed, start, stop)
    if treatment is None:
        treatment = (rng.uniforms_at(keys, 1) < config.p_treatment).astype(np.int64)
    covariate = (rng.uniforms_at(keys, 2) < config.p_covariate).astype(np.int64)

    cell_index = 2 * treatment + covariate
    rates = np.array([config.cells[(t, x)].booking_rate for t in (0, 1) for x in (0, 1)])
    probs = np.array([config.cells[(t, x)].cancel_prob for t in (0, 1) for x in (0, 1)])
    bookings = _poisson_by_inversion(rates[cell_index], rng.uniforms_at(keys, 3))

    # One Bernoulli per booking, at per-unit draw offsets 4 .. 3 + bookings.
    n = stop - start
    total = int(bookings.sum())
    if total:
        rep_keys = np.repeat(keys, bookings)
        starts = np.concatenate(([0], np.cumsum(bookings)[:-1]))
        local = np.arange(total, dtype=np.uint64) - np.repeat(starts, bookings).astype(np.uint64) + _U64(4)
        u = rng.uniforms_offset(rep_keys, local * _U64(rng.GOLDEN & rng.MASK64))
        hits = u < np.repeat(probs[cell_index], bookings)
        cancels = np.bincount(np.repeat(np.arange(n), bookings), weights=hits, minlength=n).astype(np.int64)
    else:
        cancels = np.zeros(n, dtype=np.int64)
    return treatment, covariate, bookings, cancels


def _exact_split_treatment(config: ScenarioConfig, seed: int) -> np.ndarray:
    """Assign exactly round(n * p_treatment) treated units by uniform rank."""
    n = config.n_units
    u = rng.uniforms_at(rng.unit_keys(seed, 0, n), 1)
    k = int(round(n * config.p_treatment))
    order = np.argsort(u, kind="stable")
    treatment = np.zeros(n, dtype=np.int64)
    treatment[order[:k]] = 1
    return treatment


def simulate(config: ScenarioConfig, seed: int, n_workers: int = 1) -> Dataset:
    """Generate a dataset from (config, seed); a pure function of both.

    Work may be split over ``n_workers`` contiguous unit ranges; the output
    is identical for any worker count.
    """
    config.validate()
    seed = rng.check_seed(seed)
    if n_workers < 1:
        raise ConfigurationError("n_workers must be >= 1")
    n = config.n_units

    treatment_full = _exact_split_treatment(config, seed) if config.exact_split else None

    bounds = np.linspace(0, n, min(n_workers, max(n, 1)) + 1, dtype=np.int64) if n else np.array([0, 0])
    ranges = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def run(span):
        a, b = span
        t_slice = treatment_full[a:b] if treatment_full is not None else None
        return _generate_chunk(config, seed, a, b, t_slice)

    if len(ranges) <= 1:
        chunks = [run(span) for span in ranges]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            chunks = list(pool.map(run, ranges))

    def cat(idx):
        if not chunks:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([c[idx] for c in chunks])

    return Dataset(
        unit_ids=np.arange(n, dtype=np.int64),
        treatment=cat(0),
        covariate_schema=((config.covariate_name, KIND_BINARY),),
        covariate_values=cat(1).astype(np.float64).reshape(n, 1),
        mediator=cat(2),
        outcome=cat(3),
    )


def null_scenario(booking_rate: float = 1.0, cancel_prob: float = 0.07,
                  n_units: int = DEFAULT_N_UNITS) -> ScenarioConfig:
    """A no-effect scenario: every cell shares one booking rate and cancel probability."""
    params = CellParams(booking_rate=booking_rate, cancel_prob=cancel_prob)
    return replace(default_scenario(), n_units=n_units,
                   cells={(t, x): params for t in (0, 1) for x in (0, 1)})
