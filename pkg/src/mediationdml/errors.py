"""Exception hierarchy shared across the package."""

from __future__ import annotations


class MediationError(Exception):
    """Base class for every error raised by mediationdml."""


class DataError(MediationError, ValueError):
    """Problems with the observed data."""


class LengthMismatch(DataError):
    pass


class NonBinaryColumn(DataError):
    pass


class NonFiniteCovariate(DataError):
    pass


class EmptyArm(DataError):
    pass


class EmptyCell(DataError):
    pass


class TooFewObservations(DataError):
    pass


class DisjointnessViolated(DataError):
    pass


class DimensionMismatch(MediationError, ValueError):
    pass


class FitError(MediationError):
    """A nuisance model could not be fitted."""


class OneClassOnly(FitError, ValueError):
    pass


class NumericalOverflow(MediationError, FloatingPointError):
    pass


class InconsistentFolds(MediationError, ValueError):
    pass


class EmptyRetainedSet(MediationError, ValueError):
    pass


class ZeroSe(MediationError, ValueError):
    pass


class ParseError(DataError):
    """CSV content that cannot be turned into a dataset.

    Carries the 1-based data row and the column name when known.
    """

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


class ConvergenceWarning(UserWarning):
    """Solver stopped at its iteration cap."""
