"""Nuisance models and their per-observation predictions.

Notation used in field names (binary M, binary D):

    p1x    Pr(D=1 | X)
    p1mx   Pr(D=1 | M, X)
    f1     Pr(M=1 | D=d, X), column d
    mu     E[Y | D=d, M=m, X], axis order (row, d, m)
    mu_dx  E[Y | D=d, X], column d
    nu     sum_m mu(d, m, X) f(m | 1-d, X), column d
    omega  E[mu(d, M, X) | D=1-d, X], column d

``nu`` and ``omega`` are indexed by the target arm d of E[Y(d, M(1-d))].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .data import Dataset
from .errors import DimensionMismatch, DisjointnessViolated, EmptyArm, OneClassOnly
from .learners import (
    PROB_CLIP,
    LinearModel,
    LogisticModel,
    fit_logistic_lasso,
    fit_post_lasso_linear,
)


def _clip(p: ArrayLike) -> NDArray[np.float64]:
    return np.clip(np.asarray(p, dtype=float), PROB_CLIP, 1.0 - PROB_CLIP)


def _column(v, n: int) -> NDArray[np.float64]:
    return np.broadcast_to(np.asarray(v, dtype=float), (n,)).astype(float)


# --- fitted predictors -------------------------------------------------------


@dataclass(frozen=True)
class TreatmentPropensity:
    """Pr(D=1 | X), or Pr(D=1 | M, X) when ``include_mediator`` is set."""

    model: LogisticModel
    include_mediator: bool = False

    def prob_treated(self, X: ArrayLike, M: ArrayLike | None = None) -> NDArray:
        X = np.asarray(X, dtype=float)
        if self.include_mediator:
            if M is None:
                raise DimensionMismatch("this propensity model conditions on M")
            X = np.column_stack([_column(M, X.shape[0]), X])
        return self.model.predict_proba(X)

    def p_d(self, d: int, X: ArrayLike, M: ArrayLike | None = None) -> NDArray:
        p1 = self.prob_treated(X, M)
        return p1 if d == 1 else 1.0 - p1


@dataclass(frozen=True)
class MediatorDensity:
    """f(m | d, X) from a single logit of M on [D, X]."""

    model: LogisticModel

    def prob_m1(self, d: int | ArrayLike, X: ArrayLike) -> NDArray:
        X = np.asarray(X, dtype=float)
        return self.model.predict_proba(np.column_stack([_column(d, X.shape[0]), X]))

    def density(self, m: int | ArrayLike, d: int | ArrayLike, X: ArrayLike) -> NDArray:
        f1 = self.prob_m1(d, X)
        return np.where(np.asarray(m) == 1, f1, 1.0 - f1)


@dataclass(frozen=True)
class OutcomeMean:
    """mu(d, m, X) from one linear model of Y on [D, M, D*M, X]."""

    model: LinearModel

    def predict(self, d: int | ArrayLike, m: int | ArrayLike, X: ArrayLike) -> NDArray:
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        dd, mm = _column(d, n), _column(m, n)
        return self.model.predict(np.column_stack([dd, mm, dd * mm, X]))


@dataclass(frozen=True)
class ArmMean:
    """A regression of some response on X alone (mu(d, X) or a nested mean)."""

    model: LinearModel
    d: int

    def predict(self, X: ArrayLike) -> NDArray:
        return self.model.predict(np.asarray(X, dtype=float))


# --- fitting -----------------------------------------------------------------


def fit_treatment_propensity(train: Dataset, include_mediator: bool = False) -> TreatmentPropensity:
    d = train.treatment
    if d.min() == d.max():
        raise EmptyArm("both treatment arms are needed to fit the propensity score")
    X = train.covariates
    if include_mediator:
        X = np.column_stack([train.mediator.astype(float), X])
    return TreatmentPropensity(fit_logistic_lasso(X, d), include_mediator)


def fit_mediator_density(train: Dataset) -> MediatorDensity:
    m = train.mediator
    if m.size == 0 or m.min() == m.max():
        raise OneClassOnly("mediator takes a single value in the training data")
    X = np.column_stack([train.treatment.astype(float), train.covariates])
    return MediatorDensity(fit_logistic_lasso(X, m))


def fit_outcome_mean(train: Dataset) -> OutcomeMean:
    if train.n < 2:
        raise EmptyArm("outcome model needs at least two observations")
    d = train.treatment.astype(float)
    m = train.mediator.astype(float)
    X = np.column_stack([d, m, d * m, train.covariates])
    return OutcomeMean(fit_post_lasso_linear(X, train.outcome))


def fit_conditional_mean_d(train: Dataset, d: int) -> ArmMean:
    """mu(d, X) = E[Y | D=d, X] fitted within arm d."""
    rows = train.treatment == d
    if rows.sum() < 2:
        raise EmptyArm(f"arm D={d} has fewer than two training observations")
    return ArmMean(fit_post_lasso_linear(train.covariates[rows], train.outcome[rows]), d)


def fit_nested_mean(
    train_mu: Dataset,
    train_nest: Dataset,
    d: int,
    mu_predictor: OutcomeMean | None = None,
) -> ArmMean:
    """omega(1-d, X) = E[mu(d, M, X) | D=1-d, X].

    ``mu_predictor`` (fitted on ``train_mu`` when not given) produces the
    pseudo-outcome mu(d, M_i, X_i) on the rows of ``train_nest`` with
    D = 1-d, which is then regressed on X by post-lasso.
    """
    if np.intersect1d(train_mu.row_ids, train_nest.row_ids).size:
        raise DisjointnessViolated("outcome and nested-mean samples overlap")
    if mu_predictor is None:
        mu_predictor = fit_outcome_mean(train_mu)
    rows = train_nest.treatment == 1 - d
    if rows.sum() < 2:
        raise EmptyArm(f"arm D={1 - d} has fewer than two rows in the nested-mean sample")
    X = train_nest.covariates[rows]
    pseudo = mu_predictor.predict(d, train_nest.mediator[rows], X)
    return ArmMean(fit_post_lasso_linear(X, pseudo), d)


# --- materialized predictions ----------------------------------------------


@dataclass(frozen=True, eq=False)
class NuisanceSet:
    """Per-observation nuisance values on an evaluation sample (see module doc)."""

    p1x: NDArray[np.float64]
    f1: NDArray[np.float64] | None = None
    mu: NDArray[np.float64] | None = None
    mu_dx: NDArray[np.float64] | None = None
    p1mx: NDArray[np.float64] | None = None
    nu: NDArray[np.float64] | None = None
    omega: NDArray[np.float64] | None = None

    @classmethod
    def from_components(
        cls,
        p1x: ArrayLike,
        f1: ArrayLike | None = None,
        mu: ArrayLike | None = None,
        mu_dx: ArrayLike | None = None,
        p1mx: ArrayLike | None = None,
        omega: ArrayLike | None = None,
    ) -> "NuisanceSet":
        """Clip probabilities and derive ``nu`` from ``mu`` and ``f1``."""
        p1x = _clip(p1x)
        f1 = None if f1 is None else _clip(f1)
        p1mx = None if p1mx is None else _clip(p1mx)
        mu = None if mu is None else np.asarray(mu, dtype=float)
        nu = None
        if mu is not None and f1 is not None:
            nu = np.empty((p1x.shape[0], 2))
            for d in (0, 1):
                f1_other = f1[:, 1 - d]
                nu[:, d] = mu[:, d, 1] * f1_other + mu[:, d, 0] * (1.0 - f1_other)
        return cls(
            p1x=p1x,
            f1=f1,
            mu=mu,
            mu_dx=None if mu_dx is None else np.asarray(mu_dx, dtype=float),
            p1mx=p1mx,
            nu=nu,
            omega=None if omega is None else np.asarray(omega, dtype=float),
        )

    @property
    def n(self) -> int:
        return self.p1x.shape[0]

    def p_d(self, d: int) -> NDArray:
        return self.p1x if d == 1 else 1.0 - self.p1x

    def p_dm(self, d: int) -> NDArray:
        if self.p1mx is None:
            raise ValueError("Pr(D | M, X) was not materialized")
        return self.p1mx if d == 1 else 1.0 - self.p1mx

    def f(self, m: int | ArrayLike, d: int) -> NDArray:
        """f(m | d, X) for a scalar m or one m per row."""
        f1 = self.f1[:, d]
        return np.where(np.asarray(m) == 1, f1, 1.0 - f1)

    def mu_at(self, d: int, m: int | ArrayLike) -> NDArray:
        m = np.broadcast_to(np.asarray(m, dtype=np.intp), (self.n,))
        return self.mu[np.arange(self.n), d, m]

    def take(self, idx: ArrayLike) -> "NuisanceSet":
        idx = np.asarray(idx)
        return NuisanceSet(**{k: (None if v is None else v[idx])
                              for k, v in self.__dict__.items()})

    @classmethod
    def scatter(cls, parts: list[tuple[NDArray, "NuisanceSet"]], n: int) -> "NuisanceSet":
        """Reassemble fold-level sets into full-sample order."""
        first = parts[0][1]
        out = {}
        for name, value in first.__dict__.items():
            if value is None:
                out[name] = None
                continue
            arr = np.empty((n,) + value.shape[1:])
            for idx, part in parts:
                arr[idx] = getattr(part, name)
            out[name] = arr
        return cls(**out)


def materialize(
    eval_fold: Dataset,
    propensity: TreatmentPropensity,
    *,
    mediator: MediatorDensity | None = None,
    outcome: OutcomeMean | None = None,
    arm_means: tuple[ArmMean, ArmMean] | None = None,
    bayes_propensity: TreatmentPropensity | None = None,
    nested: tuple[ArmMean, ArmMean] | None = None,
) -> NuisanceSet:
    """Evaluate fitted predictors on every row of ``eval_fold``.

    Predictors must come from data disjoint from ``eval_fold``; ``arm_means``
    and ``nested`` are indexed by the arm d they were fitted for.
    """
    X = eval_fold.covariates
    n = eval_fold.n
    p1x = propensity.prob_treated(X)
    f1 = None
    if mediator is not None:
        f1 = np.column_stack([mediator.prob_m1(0, X), mediator.prob_m1(1, X)])
    mu = None
    if outcome is not None:
        mu = np.empty((n, 2, 2))
        for d in (0, 1):
            for m in (0, 1):
                mu[:, d, m] = outcome.predict(d, m, X)
    mu_dx = None
    if arm_means is not None:
        mu_dx = np.column_stack([arm_means[0].predict(X), arm_means[1].predict(X)])
    p1mx = None
    if bayes_propensity is not None:
        p1mx = bayes_propensity.prob_treated(X, eval_fold.mediator)
    omega = None
    if nested is not None:
        omega = np.column_stack([nested[0].predict(X), nested[1].predict(X)])
    return NuisanceSet.from_components(p1x, f1=f1, mu=mu, mu_dx=mu_dx, p1mx=p1mx, omega=omega)


class PostLassoLearner:
    """Default nuisance learner: post-lasso logit and post-lasso OLS.

    The cross-fitting engine only calls these five methods, so any object
    providing them (for example oracle predictors) can stand in.
    """

    def fit_treatment_propensity(self, train, include_mediator=False):
        return fit_treatment_propensity(train, include_mediator)

    def fit_mediator_density(self, train):
        return fit_mediator_density(train)

    def fit_outcome_mean(self, train):
        return fit_outcome_mean(train)

    def fit_conditional_mean_d(self, train, d):
        return fit_conditional_mean_d(train, d)

    def fit_nested_mean(self, train_mu, train_nest, d, mu_predictor=None):
        return fit_nested_mean(train_mu, train_nest, d, mu_predictor)
