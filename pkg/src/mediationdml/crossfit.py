"""K-fold cross-fitting for the four counterfactual means.

Nuisances for fold k are trained on the complement of k and evaluated on k.
The efficient-score pipeline fits p_d(X), f(M|D,X) and mu(D,M,X) on the
whole complement. The Bayes-rearranged pipeline fits p_d(X) and p_d(M,X) on
the complement, then splits it in two halves: mu on the first, the nested
mean on the second. The ATE pipeline fits p_d(X) and mu(d,X) per arm.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset, FoldAssignment, make_folds, validate_dataset
from .errors import EmptyArm, EmptyCell, FitError, MediationError
from .nuisance import NuisanceSet, PostLassoLearner, materialize
from .scores import DEFAULT_TRIM, ScoreVector, Target, evaluate_score

log = logging.getLogger(__name__)

DEFAULT_FOLDS = 3
PIPELINES = ("theorem1", "theorem2", "ate")


@dataclass(frozen=True, eq=False)
class CounterfactualEstimate:
    """Cross-fitted mean of one score over the retained observations."""

    point: float
    score: ScoreVector
    folds: FoldAssignment

    @property
    def target(self) -> Target:
        return self.score.target

    @property
    def label(self) -> str:
        return self.score.label

    @property
    def retained_n(self) -> int:
        return int((~self.score.trimmed).sum())

    @property
    def trimmed_n(self) -> int:
        return int(self.score.trimmed.sum())

    @property
    def se(self) -> float:
        kept = self.score.retained
        return float(np.sqrt(np.mean((kept - kept.mean()) ** 2) / kept.size))


def split_halves(idx: np.ndarray, seed: int | None, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Random even split of a fold complement, seeded by (seed, k)."""
    entropy = [k] if seed is None else [int(seed), k]
    perm = np.random.default_rng(entropy).permutation(idx.size)
    half = (idx.size + 1) // 2
    return np.sort(idx[perm[:half]]), np.sort(idx[perm[half:]])


def _fit_fold(data: Dataset, folds: FoldAssignment, k: int, pipelines, learner):
    train_idx = folds.complement(k)
    train = data.subset(train_idx)
    evalf = data.subset(folds.indices(k))
    out = {}

    propensity = learner.fit_treatment_propensity(train, False)
    if "theorem1" in pipelines:
        mediator = learner.fit_mediator_density(train)
        outcome = learner.fit_outcome_mean(train)
        out["theorem1"] = materialize(evalf, propensity, mediator=mediator, outcome=outcome)
    if "theorem2" in pipelines:
        bayes = learner.fit_treatment_propensity(train, True)
        idx_a, idx_b = split_halves(train_idx, folds.seed, k)
        half_a, half_b = data.subset(idx_a), data.subset(idx_b)
        for name, half in (("first", half_a), ("second", half_b)):
            if half.treatment.min() == half.treatment.max():
                raise EmptyArm(f"fold {k}: {name} half of the complement lacks a treatment arm")
        outcome_a = learner.fit_outcome_mean(half_a)
        nested = tuple(learner.fit_nested_mean(half_a, half_b, d, outcome_a) for d in (0, 1))
        out["theorem2"] = materialize(evalf, propensity, outcome=outcome_a,
                                      bayes_propensity=bayes, nested=nested)
    if "ate" in pipelines:
        arms = tuple(learner.fit_conditional_mean_d(train, d) for d in (0, 1))
        out["ate"] = materialize(evalf, propensity, arm_means=arms)
    return out


def crossfit_nuisances(
    data: Dataset,
    folds: FoldAssignment,
    pipelines=PIPELINES,
    learner=None,
) -> dict[str, NuisanceSet]:
    """Out-of-fold nuisance predictions for each requested pipeline.

    Returns one :class:`NuisanceSet` per pipeline name, rows in data order.
    Folds run sequentially in fixed order; any fold failure propagates.
    """
    learner = PostLassoLearner() if learner is None else learner
    if folds.n != data.n:
        raise ValueError("fold assignment does not match the data")
    pipelines = tuple(pipelines)
    unknown = set(pipelines) - set(PIPELINES)
    if unknown:
        raise ValueError(f"unknown pipelines {sorted(unknown)}")
    parts = {name: [] for name in pipelines}
    for k in range(folds.K):
        try:
            fitted = _fit_fold(data, folds, k, pipelines, learner)
        except MediationError:
            log.debug("fold %d failed", k)
            raise
        for name, nu in fitted.items():
            parts[name].append((folds.indices(k), nu))
    return {name: NuisanceSet.scatter(parts[name], data.n) for name in pipelines}


def counterfactual(
    target: Target | str,
    data: Dataset,
    nuisances: NuisanceSet,
    folds: FoldAssignment,
    d: int,
    m: int | None = None,
    threshold: float | None = DEFAULT_TRIM,
) -> CounterfactualEstimate:
    score = evaluate_score(target, data.outcome, data.treatment, data.mediator, nuisances,
                           d, m, threshold)
    kept = score.retained
    if kept.size == 0:
        raise FitError(f"every observation was trimmed for {score.label}")
    return CounterfactualEstimate(float(kept.mean()), score, folds)


def _prepare(data, K, seed):
    data = validate_dataset(data)
    return data, make_folds(data.n, K, seed)


def run_algorithm1(data: Dataset, K: int = DEFAULT_FOLDS, seed: int | None = 0,
                   threshold: float | None = DEFAULT_TRIM, d: int = 1,
                   learner=None) -> CounterfactualEstimate:
    """E[Y(d, M(1-d))] from the efficient score with mediator density."""
    data, folds = _prepare(data, K, seed)
    nu = crossfit_nuisances(data, folds, ("theorem1",), learner)["theorem1"]
    return counterfactual(Target.PSI, data, nu, folds, d, threshold=threshold)


def run_algorithm2(data: Dataset, K: int = DEFAULT_FOLDS, seed: int | None = 0,
                   threshold: float | None = DEFAULT_TRIM, d: int = 1,
                   learner=None) -> CounterfactualEstimate:
    """E[Y(d, M(1-d))] from the Bayes-rearranged score with a nested mean."""
    data, folds = _prepare(data, K, seed)
    nu = crossfit_nuisances(data, folds, ("theorem2",), learner)["theorem2"]
    return counterfactual(Target.PSI_STAR, data, nu, folds, d, threshold=threshold)


def run_ate_arm(data: Dataset, K: int = DEFAULT_FOLDS, seed: int | None = 0,
                threshold: float | None = DEFAULT_TRIM, d: int = 1,
                learner=None) -> CounterfactualEstimate:
    """E[Y(d, M(d))] from the doubly robust ATE score."""
    data, folds = _prepare(data, K, seed)
    nu = crossfit_nuisances(data, folds, ("ate",), learner)["ate"]
    return counterfactual(Target.ALPHA, data, nu, folds, d, threshold=threshold)


def run_controlled(data: Dataset, K: int = DEFAULT_FOLDS, seed: int | None = 0,
                   threshold: float | None = DEFAULT_TRIM, d: int = 1, m: int = 0,
                   learner=None) -> CounterfactualEstimate:
    """E[Y(d, m)] for the controlled direct effect."""
    data, folds = _prepare(data, K, seed)
    if not np.any((data.treatment == d) & (data.mediator == m)):
        raise EmptyCell(f"no observations with D={d}, M={m}")
    nu = crossfit_nuisances(data, folds, ("theorem1",), learner)["theorem1"]
    return counterfactual(Target.PSI_DM, data, nu, folds, d, m, threshold)
