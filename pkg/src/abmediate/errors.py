"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes (usage/configuration -> 1, data
validation -> 2, numerical/estimation failures -> 3) and the HTTP service
maps them onto status codes.
"""

from __future__ import annotations


class AbmediateError(Exception):
    """Base class for all package errors."""


class ConfigurationError(AbmediateError):
    """A request, model spec, or scenario is malformed or out of range."""


class DataValidationError(AbmediateError):
    """Input data violates a dataset invariant or cannot be parsed.

    ``line`` is the 1-based line number in the source CSV when known;
    ``row`` is the 0-based record index when the error was found on an
    in-memory dataset (the CSV loader translates it into a line number).
    """

    def __init__(self, message: str, line: int | None = None, row: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.row = row


class NumericalError(AbmediateError):
    """A numerical procedure failed (non-convergence, rank deficiency, ...).

    ``last_coefficients`` carries the final IRLS iterate when the failure
    happened mid-fit, so callers can inspect the diverging solution.
    """

    def __init__(self, message: str, last_coefficients=None):
        super().__init__(message)
        self.last_coefficients = last_coefficients


class EstimationError(AbmediateError):
    """An estimator cannot run on the given data (empty arm, empty subgroup)."""
