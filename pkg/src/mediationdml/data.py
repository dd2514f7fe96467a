"""Observed-data container, validation and fold assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import (
    EmptyArm,
    LengthMismatch,
    NonBinaryColumn,
    NonFiniteCovariate,
    TooFewObservations,
)


def _frozen(a: NDArray) -> NDArray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed sample W = (Y, M, D, X).

    Build through :func:`validate_dataset`; arrays are read-only.
    """

    outcome: NDArray[np.float64]
    treatment: NDArray[np.int8]
    mediator: NDArray[np.int8]
    covariates: NDArray[np.float64]
    rows: NDArray[np.intp] | None = None

    @property
    def row_ids(self) -> NDArray[np.intp]:
        """Positions of these rows in the dataset they were cut from."""
        return np.arange(self.n) if self.rows is None else self.rows

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def subset(self, idx: ArrayLike) -> "Dataset":
        """Row subset. Skips the arm check so that small views stay usable."""
        idx = np.asarray(idx)
        return Dataset(
            _frozen(self.outcome[idx]),
            _frozen(self.treatment[idx]),
            _frozen(self.mediator[idx]),
            _frozen(self.covariates[idx]),
            _frozen(self.row_ids[idx]),
        )

    def with_outcome(self, outcome: ArrayLike) -> "Dataset":
        return Dataset(_frozen(np.asarray(outcome, dtype=float)), self.treatment,
                       self.mediator, self.covariates, self.rows)

    def equals(self, other: "Dataset") -> bool:
        return (
            np.array_equal(self.outcome, other.outcome)
            and np.array_equal(self.treatment, other.treatment)
            and np.array_equal(self.mediator, other.mediator)
            and np.array_equal(self.covariates, other.covariates)
        )


def _binary(values: ArrayLike, name: str) -> NDArray[np.int8]:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise NonBinaryColumn(f"{name} must be one-dimensional")
    as_float = arr.astype(float)
    bad = ~np.isin(as_float, (0.0, 1.0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonBinaryColumn(f"{name} has value {arr[i]!r} at index {i}; expected 0 or 1")
    return as_float.astype(np.int8)


def validate_dataset(
    outcome: ArrayLike | Dataset,
    treatment: ArrayLike | None = None,
    mediator: ArrayLike | None = None,
    covariates: ArrayLike | None = None,
) -> Dataset:
    """Check a candidate sample and return it as a :class:`Dataset`.

    A one-dimensional covariate array is read as a single column. Passing an
    existing ``Dataset`` re-validates it and returns it unchanged.

    Raises
    ------
    LengthMismatch, NonBinaryColumn, NonFiniteCovariate, EmptyArm
    """
    if isinstance(outcome, Dataset):
        ds = outcome
        validate_dataset(ds.outcome, ds.treatment, ds.mediator, ds.covariates)
        return ds
    if treatment is None or mediator is None or covariates is None:
        raise TypeError("outcome, treatment, mediator and covariates are all required")

    y = np.asarray(outcome, dtype=float)
    if y.ndim != 1:
        raise LengthMismatch("outcome must be one-dimensional")
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise LengthMismatch("covariates must be a matrix")
    d = _binary(treatment, "treatment")
    m = _binary(mediator, "mediator")

    n = y.shape[0]
    lengths = {"outcome": n, "treatment": d.shape[0], "mediator": m.shape[0],
               "covariates": x.shape[0]}
    if n < 1 or len(set(lengths.values())) != 1:
        raise LengthMismatch(f"inconsistent lengths: {lengths}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteCovariate("covariate matrix contains NaN or infinite entries")
    if not np.all(np.isfinite(y)):
        raise NonFiniteCovariate("outcome contains NaN or infinite entries")
    n_treated = int(d.sum())
    if n_treated == 0 or n_treated == n:
        raise EmptyArm(f"treatment arm {0 if n_treated == n else 1} has no observations")
    return Dataset(_frozen(y), _frozen(d), _frozen(m), _frozen(x))


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold_of: NDArray[np.intp]
    K: int
    seed: int | None

    @property
    def n(self) -> int:
        return self.fold_of.shape[0]

    def indices(self, k: int) -> NDArray[np.intp]:
        return np.flatnonzero(self.fold_of == k)

    def complement(self, k: int) -> NDArray[np.intp]:
        return np.flatnonzero(self.fold_of != k)

    def sizes(self) -> NDArray[np.intp]:
        return np.bincount(self.fold_of, minlength=self.K)

    def same_as(self, other: "FoldAssignment") -> bool:
        return self.K == other.K and np.array_equal(self.fold_of, other.fold_of)


def make_folds(n: int, K: int, seed: int | None) -> FoldAssignment:
    """Random partition of ``range(n)`` into K folds whose sizes differ by at most one.

    A seeded permutation is cut into K contiguous blocks, so the result is a
    deterministic function of (n, K, seed).
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    if n < K:
        raise TooFewObservations(f"cannot split {n} observations into {K} folds")
    perm = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.intp)
    for k, block in enumerate(np.array_split(perm, K)):
        fold_of[block] = k
    return FoldAssignment(_frozen(fold_of), K, seed)
