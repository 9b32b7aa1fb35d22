"""Experiment dataset model, CSV round-trip, and cell-level summaries.

One record is one visitor: treatment arm, pre-treatment covariates, a
booking count (the mediator) and a cancellation count (the outcome).
Datasets are immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigurationError, DataValidationError

KIND_BINARY = "binary"
KIND_NUMERIC = "numeric"

_FIXED_HEAD = ("unit_id", "treatment")
_FIXED_TAIL = ("bookings", "cancellations")


@dataclass(frozen=True)
class ExperimentRecord:
    """A single visitor's observed data."""

    unit_id: int
    treatment: int
    covariates: dict[str, float]
    mediator: int
    outcome: int


@dataclass(frozen=True)
class CellSummary:
    """Aggregates for one (treatment x covariate-pattern) cell.

    ``cancellations_per_booking`` is None when the cell has no bookings;
    an undefined rate is never reported as 0.
    """

    treatment: int
    pattern: dict[str, int]
    n_units: int
    share_of_visitors: float
    bookings_per_visitor: float
    cancellations_per_booking: float | None
    cancellations_per_visitor: float

    def to_dict(self) -> dict:
        row: dict = {"treatment": self.treatment}
        row.update(self.pattern)
        row.update(
            n_units=self.n_units,
            share_of_visitors=self.share_of_visitors,
            bookings_per_visitor=self.bookings_per_visitor,
            cancellations_per_booking=self.cancellations_per_booking,
            cancellations_per_visitor=self.cancellations_per_visitor,
        )
        return row


@dataclass(frozen=True)
class Dataset:
    """Column-oriented experiment data with validated invariants.

    covariate_schema is an ordered tuple of (name, kind) pairs with kind
    in {"binary", "numeric"}; covariate_values has one column per entry.
    """

    unit_ids: np.ndarray
    treatment: np.ndarray
    covariate_schema: tuple[tuple[str, str], ...]
    covariate_values: np.ndarray
    mediator: np.ndarray
    outcome: np.ndarray

    def __post_init__(self):
        n = self.unit_ids.shape[0]
        for name in ("treatment", "mediator", "outcome"):
            if getattr(self, name).shape != (n,):
                raise DataValidationError(f"{name} column length differs from unit_id")
        k = len(self.covariate_schema)
        if self.covariate_values.shape != (n, k):
            raise DataValidationError("covariate matrix shape does not match schema")
        for name, kind in self.covariate_schema:
            if kind not in (KIND_BINARY, KIND_NUMERIC):
                raise DataValidationError(f"unknown covariate kind {kind!r} for {name!r}")
            if name in ("unit_id", "treatment", "bookings", "cancellations", "mediator", "outcome"):
                raise DataValidationError(f"covariate name {name!r} collides with a reserved column")
        if n == 0:
            return
        self._check_rows()

    def _check_rows(self) -> None:
        def first_bad(mask: np.ndarray) -> int:
            return int(np.argmax(mask))

        if np.any(self.unit_ids < 0):
            raise DataValidationError("unit_id must be non-negative", row=first_bad(self.unit_ids < 0))
        if len(np.unique(self.unit_ids)) != len(self.unit_ids):
            raise DataValidationError("unit_id must be unique within a dataset")
        bad = (self.treatment != 0) & (self.treatment != 1)
        if np.any(bad):
            raise DataValidationError("treatment must be 0 or 1", row=first_bad(bad))
        if np.any(self.mediator < 0):
            raise DataValidationError("mediator (bookings) must be non-negative", row=first_bad(self.mediator < 0))
        if np.any(self.outcome < 0):
            raise DataValidationError("outcome (cancellations) must be non-negative", row=first_bad(self.outcome < 0))
        bad = self.outcome > self.mediator
        if np.any(bad):
            raise DataValidationError("outcome exceeds mediator (cancellations > bookings)", row=first_bad(bad))
        for j, (name, kind) in enumerate(self.covariate_schema):
            col = self.covariate_values[:, j]
            if not np.all(np.isfinite(col)):
                raise DataValidationError(f"covariate {name!r} contains non-finite values",
                                          row=first_bad(~np.isfinite(col)))
            if kind == KIND_BINARY:
                bad = (col != 0) & (col != 1)
                if np.any(bad):
                    raise DataValidationError(f"binary covariate {name!r} must be 0 or 1", row=first_bad(bad))

    @property
    def n_units(self) -> int:
        return int(self.unit_ids.shape[0])

    def __len__(self) -> int:
        return self.n_units

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.covariate_schema)

    def covariate(self, name: str) -> np.ndarray:
        for j, (cname, _) in enumerate(self.covariate_schema):
            if cname == name:
                return self.covariate_values[:, j]
        raise ConfigurationError(f"unknown covariate {name!r}; dataset has {list(self.covariate_names)}")

    def column(self, role: str) -> np.ndarray:
        """Resolve a model column role ("treatment", "mediator", "outcome" or a covariate name)."""
        if role == "treatment":
            return self.treatment.astype(np.float64)
        if role == "mediator":
            return self.mediator.astype(np.float64)
        if role == "outcome":
            return self.outcome.astype(np.float64)
        return self.covariate(name=role).astype(np.float64)

    def record(self, i: int) -> ExperimentRecord:
        return ExperimentRecord(
            unit_id=int(self.unit_ids[i]),
            treatment=int(self.treatment[i]),
            covariates={name: float(self.covariate_values[i, j])
                        for j, (name, _) in enumerate(self.covariate_schema)},
            mediator=int(self.mediator[i]),
            outcome=int(self.outcome[i]),
        )

    def iter_records(self) -> Iterator[ExperimentRecord]:
        return (self.record(i) for i in range(self.n_units))

    @staticmethod
    def from_records(records: list[ExperimentRecord],
                     covariate_schema: tuple[tuple[str, str], ...]) -> "Dataset":
        names = [name for name, _ in covariate_schema]
        n = len(records)
        cov = np.zeros((n, len(names)), dtype=np.float64)
        for i, rec in enumerate(records):
            if set(rec.covariates) != set(names):
                raise DataValidationError(
                    f"record {rec.unit_id} covariates {sorted(rec.covariates)} do not match schema {names}")
            for j, name in enumerate(names):
                cov[i, j] = rec.covariates[name]
        return Dataset(
            unit_ids=np.array([r.unit_id for r in records], dtype=np.int64),
            treatment=np.array([r.treatment for r in records], dtype=np.int64),
            covariate_schema=tuple(covariate_schema),
            covariate_values=cov,
            mediator=np.array([r.mediator for r in records], dtype=np.int64),
            outcome=np.array([r.outcome for r in records], dtype=np.int64),
        )


def _parse_int(text: str, line: int, column: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise DataValidationError(f"column {column!r}: expected an integer, got {text!r}", line=line) from None


def load_csv(source) -> Dataset:
    """Parse a dataset from a path, text/byte stream, or bytes.

    Expected header: ``unit_id,treatment,<covariates...>,bookings,cancellations``.
    Covariate kinds are inferred: a column whose values are all 0/1 is binary,
    anything else numeric. Raises DataValidationError with the offending line
    number on malformed input; missing values are a hard error.
    """
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    elif isinstance(source, bytes):
        text = source.decode("utf-8")
    elif hasattr(source, "read"):
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    else:
        raise ConfigurationError(f"cannot read CSV from {type(source).__name__}")

    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataValidationError("empty input: missing header", line=1)
    header = lines[0].split(",")
    if len(header) < 4 or tuple(header[:2]) != _FIXED_HEAD or tuple(header[-2:]) != _FIXED_TAIL:
        raise DataValidationError(
            "header must be 'unit_id,treatment,<covariates...>,bookings,cancellations', "
            f"got {lines[0]!r}", line=1)
    cov_names = header[2:-2]
    if len(set(cov_names)) != len(cov_names):
        raise DataValidationError("duplicate covariate names in header", line=1)
    n_cols = len(header)
    n = len(lines) - 1

    unit_ids = np.empty(n, dtype=np.int64)
    treatment = np.empty(n, dtype=np.int64)
    mediator = np.empty(n, dtype=np.int64)
    outcome = np.empty(n, dtype=np.int64)
    cov = np.empty((n, len(cov_names)), dtype=np.float64)

    for i, row in enumerate(lines[1:]):
        line_no = i + 2
        fields = row.split(",")
        if len(fields) != n_cols:
            raise DataValidationError(f"expected {n_cols} fields, got {len(fields)}", line=line_no)
        if any(f.strip() == "" for f in fields):
            raise DataValidationError("missing value", line=line_no)
        unit_ids[i] = _parse_int(fields[0], line_no, "unit_id")
        treatment[i] = _parse_int(fields[1], line_no, "treatment")
        for j, name in enumerate(cov_names):
            try:
                cov[i, j] = float(fields[2 + j])
            except ValueError:
                raise DataValidationError(
                    f"column {name!r}: expected a number, got {fields[2 + j]!r}", line=line_no) from None
        mediator[i] = _parse_int(fields[-2], line_no, "bookings")
        outcome[i] = _parse_int(fields[-1], line_no, "cancellations")

    schema = []
    for j, name in enumerate(cov_names):
        col = cov[:, j] if n else np.zeros(0)
        is_binary = n == 0 or bool(np.all((col == 0) | (col == 1)))
        schema.append((name, KIND_BINARY if is_binary else KIND_NUMERIC))

    try:
        return Dataset(unit_ids=unit_ids, treatment=treatment,
                       covariate_schema=tuple(schema), covariate_values=cov,
                       mediator=mediator, outcome=outcome)
    except DataValidationError as err:
        if err.row is not None:
            raise DataValidationError(str(err), line=err.row + 2) from None
        raise


def _format_covariate(value: float, kind: str) -> str:
    if kind == KIND_BINARY or float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def write_csv(dataset: Dataset, dest=None) -> bytes:
    """Serialize a dataset to CSV bytes (LF line endings, no padding).

    ``dest`` may be a path or binary stream; the bytes are returned either way.
    The output round-trips through load_csv field-for-field.
    """
    parts = [",".join(_FIXED_HEAD + dataset.covariate_names + _FIXED_TAIL)]
    kinds = [kind for _, kind in dataset.covariate_schema]
    for i in range(dataset.n_units):
        covs = (_format_covariate(dataset.covariate_values[i, j], kinds[j])
                for j in range(len(kinds)))
        parts.append(",".join((
            str(int(dataset.unit_ids[i])),
            str(int(dataset.treatment[i])),
            *covs,
            str(int(dataset.mediator[i])),
            str(int(dataset.outcome[i])),
        )))
    payload = ("\n".join(parts) + "\n").encode("utf-8")
    if dest is not None:
        if isinstance(dest, (str, Path)):
            Path(dest).write_bytes(payload)
        else:
            dest.write(payload)
    return payload


def cell_summary(dataset: Dataset, covariate_names: list[str] | None = None) -> list[CellSummary]:
    """Per-cell aggregates over (treatment x named binary covariates).

    Cells are the observed combinations, ordered by treatment then pattern.
    Cells with zero bookings report cancellations_per_booking as None.
    """
    if covariate_names is None:
        covariate_names = [name for name, kind in dataset.covariate_schema if kind == KIND_BINARY]
    kinds = dict(dataset.covariate_schema)
    for name in covariate_names:
        if name not in kinds:
            raise ConfigurationError(f"unknown covariate {name!r}")
        if kinds[name] != KIND_BINARY:
            raise ConfigurationError(f"covariate {name!r} is not binary; cells need binary covariates")

    n = dataset.n_units
    cols = [dataset.covariate(name) for name in covariate_names]
    keys = dataset.treatment.astype(np.int64).copy()
    for col in cols:
        keys = keys * 2 + col.astype(np.int64)

    summaries = []
    for key in np.unique(keys):
        sel = keys == key
        n_cell = int(sel.sum())
        bits = []
        k = int(key)
        for _ in covariate_names:
            bits.append(k % 2)
            k //= 2
        pattern = dict(zip(covariate_names, reversed(bits)))
        bookings = dataset.mediator[sel]
        cancels = dataset.outcome[sel]
        total_bookings = int(bookings.sum())
        summaries.append(CellSummary(
            treatment=int(k),
            pattern=pattern,
            n_units=n_cell,
            share_of_visitors=n_cell / n,
            bookings_per_visitor=float(bookings.mean()),
            cancellations_per_booking=(float(cancels.sum() / total_bookings) if total_bookings else None),
            cancellations_per_visitor=float(cancels.mean()),
        ))
    summaries.sort(key=lambda s: (s.treatment, tuple(s.pattern.values())))
    return summaries
