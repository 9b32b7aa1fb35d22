from __future__ import annotations

import numpy as np
import pytest

import abmediate as ab

DEFAULT_SEED = 42


@pytest.fixture(scope="session")
def default_dataset() -> ab.Dataset:
    """The stock scenario at full size, shared by the heavier tests."""
    return ab.simulate(ab.default_scenario(), DEFAULT_SEED)


@pytest.fixture(scope="session")
def small_scenario() -> ab.ScenarioConfig:
    from dataclasses import replace

    return replace(ab.default_scenario(), n_units=4000)


@pytest.fixture(scope="session")
def small_dataset(small_scenario) -> ab.Dataset:
    return ab.simulate(small_scenario, DEFAULT_SEED)


@pytest.fixture()
def tiny_dataset() -> ab.Dataset:
    """Hand-built five-visitor dataset for exact-value tests."""
    records = [
        ab.ExperimentRecord(unit_id=0, treatment=0, covariates={"business": 0}, mediator=2, outcome=1),
        ab.ExperimentRecord(unit_id=1, treatment=0, covariates={"business": 1}, mediator=0, outcome=0),
        ab.ExperimentRecord(unit_id=2, treatment=1, covariates={"business": 0}, mediator=1, outcome=0),
        ab.ExperimentRecord(unit_id=3, treatment=1, covariates={"business": 1}, mediator=3, outcome=2),
        ab.ExperimentRecord(unit_id=4, treatment=1, covariates={"business": 1}, mediator=5, outcome=1),
    ]
    return ab.Dataset.from_records(records, (("business", "binary"),))


def make_dataset(treatment, business, bookings, cancellations) -> ab.Dataset:
    n = len(treatment)
    return ab.Dataset(
        unit_ids=np.arange(n, dtype=np.int64),
        treatment=np.asarray(treatment, dtype=np.int64),
        covariate_schema=(("business", "binary"),),
        covariate_values=np.asarray(business, dtype=np.float64).reshape(n, 1),
        mediator=np.asarray(bookings, dtype=np.int64),
        outcome=np.asarray(cancellations, dtype=np.int64),
    )
