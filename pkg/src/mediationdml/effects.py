"""Effect assembly, score-based standard errors and p-values.

Effects are differences of counterfactual means:

    delta    = Lambda_1 - Lambda_0          (total effect)
    theta(1) = Lambda_1 - Psi_0             (direct, mediator at M(1))
    theta(0) = Psi_1 - Lambda_0             (direct, mediator at M(0))
    delta(1) = Lambda_1 - Psi_1             (indirect, treatment at 1)
    delta(0) = Psi_0 - Lambda_0             (indirect, treatment at 0)

where Lambda_d = E[Y(d, M(d))] and Psi_d = E[Y(d, M(1-d))]. All five are
computed on the rows retained by all four scores, so theta(1) + delta(0) and
theta(0) + delta(1) reproduce delta up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.stats import norm

from .crossfit import (
    DEFAULT_FOLDS,
    CounterfactualEstimate,
    counterfactual,
    crossfit_nuisances,
)
from .data import Dataset, FoldAssignment, make_folds, validate_dataset
from .errors import EmptyCell, EmptyRetainedSet, InconsistentFolds, ZeroSe
from .scores import DEFAULT_TRIM, ScoreVector, Target

EFFECT_NAMES = ("delta", "theta1", "theta0", "delta1", "delta0")
ESTIMATORS = ("theorem1", "theorem2")


@dataclass(frozen=True)
class Effect:
    estimate: float
    se: float
    p_value: float


@dataclass(frozen=True, eq=False)
class EffectReport:
    estimator: str
    delta: Effect
    theta1: Effect
    theta0: Effect
    delta1: Effect
    delta0: Effect
    mean_y00: float
    counterfactuals: dict[str, float]
    retained_n: int
    trimmed_n: int
    gamma: dict[int, Effect] = field(default_factory=dict)

    def effects(self) -> dict[str, Effect]:
        out = {name: getattr(self, name) for name in EFFECT_NAMES}
        for m, eff in sorted(self.gamma.items()):
            out[f"gamma{m}"] = eff
        return out


def p_value(effect: float, se: float) -> float:
    """Two-sided normal p-value."""
    if not se > 0:
        raise ZeroSe("standard error must be positive")
    return float(min(1.0, 2.0 * norm.sf(abs(effect) / se)))


def _difference_effect(a: np.ndarray, b: np.ndarray | None) -> Effect:
    diff = a if b is None else a - b
    if diff.size == 0:
        raise EmptyRetainedSet("no retained observations")
    est = float(diff.mean())
    se = float(np.sqrt(np.mean((diff - est) ** 2) / diff.size))
    if se > 0:
        p = p_value(est, se)
    else:
        p = 1.0 if est == 0 else 0.0
    return Effect(est, se, p)


def effect_se(score_a: ScoreVector, score_b: ScoreVector | None = None) -> float:
    """Standard error of mean(a - b) on the common retained rows.

    With a single vector this is the counterfactual's own standard error,
    using squares centred at the estimate.
    """
    keep = ~score_a.trimmed
    if score_b is not None:
        keep &= ~score_b.trimmed
    a = score_a.values[keep]
    b = None if score_b is None else score_b.values[keep]
    return _difference_effect(a, b).se


def _check_alignment(estimates: Iterable[CounterfactualEstimate]) -> FoldAssignment:
    estimates = list(estimates)
    folds = estimates[0].folds
    for est in estimates[1:]:
        if est.score.values.shape != estimates[0].score.values.shape or not est.folds.same_as(folds):
            raise InconsistentFolds("counterfactual estimates were computed on different folds")
    return folds


def assemble_effects(
    lambda1: CounterfactualEstimate,
    lambda0: CounterfactualEstimate,
    psi1: CounterfactualEstimate,
    psi0: CounterfactualEstimate,
    estimator: str = "",
    controlled: dict[int, tuple[CounterfactualEstimate, CounterfactualEstimate]] | None = None,
) -> EffectReport:
    """Total, direct and indirect effects from four counterfactual estimates.

    ``controlled`` maps m to the pair (E[Y(1,m)], E[Y(0,m)]) estimates; each
    controlled direct effect uses the rows kept by both of its scores.
    """
    _check_alignment([lambda1, lambda0, psi1, psi0])
    trimmed = (lambda1.score.trimmed | lambda0.score.trimmed
               | psi1.score.trimmed | psi0.score.trimmed)
    keep = ~trimmed
    if not keep.any():
        raise EmptyRetainedSet("every observation was trimmed")
    a1, a0 = lambda1.score.values[keep], lambda0.score.values[keep]
    s1, s0 = psi1.score.values[keep], psi0.score.values[keep]

    gamma = {}
    for m, (est1, est0) in (controlled or {}).items():
        _check_alignment([lambda1, est1, est0])
        g_keep = ~(est1.score.trimmed | est0.score.trimmed)
        gamma[int(m)] = _difference_effect(est1.score.values[g_keep], est0.score.values[g_keep])

    return EffectReport(
        estimator=estimator,
        delta=_difference_effect(a1, a0),
        theta1=_difference_effect(a1, s0),
        theta0=_difference_effect(s1, a0),
        delta1=_difference_effect(a1, s1),
        delta0=_difference_effect(s0, a0),
        mean_y00=float(a0.mean()),
        counterfactuals={
            lambda1.label: float(a1.mean()),
            lambda0.label: float(a0.mean()),
            psi1.label: float(s1.mean()),
            psi0.label: float(s0.mean()),
        },
        retained_n=int(keep.sum()),
        trimmed_n=int(trimmed.sum()),
        gamma=gamma,
    )


@dataclass(frozen=True, eq=False)
class MediationResult:
    reports: dict[str, EffectReport]
    counterfactuals: dict[str, CounterfactualEstimate]
    folds: FoldAssignment


def _controlled_values(controlled_m) -> tuple[int, ...]:
    if controlled_m is None:
        return ()
    if isinstance(controlled_m, (int, np.integer)):
        values = (int(controlled_m),)
    else:
        values = tuple(int(m) for m in controlled_m)
    if any(m not in (0, 1) for m in values):
        raise ValueError("controlled mediator values must be 0 or 1")
    return values


def estimate_effects(
    data: Dataset,
    K: int = DEFAULT_FOLDS,
    seed: int | None = 0,
    threshold: float | None = DEFAULT_TRIM,
    score: str = "both",
    controlled_m: int | Iterable[int] | None = None,
    learner=None,
) -> MediationResult:
    """Run the cross-fitted pipelines once and assemble every effect.

    ``score`` selects ``"theorem1"`` (efficient score with mediator density),
    ``"theorem2"`` (Bayes-rearranged score) or ``"both"``. Nuisance models
    shared between pipelines are fitted once per fold.
    """
    if score not in ("theorem1", "theorem2", "both"):
        raise ValueError("score must be theorem1, theorem2 or both")
    data = validate_dataset(data)
    folds = make_folds(data.n, K, seed)
    estimators = ESTIMATORS if score == "both" else (score,)
    ms = _controlled_values(controlled_m)
    for m in ms:
        for d in (0, 1):
            if not np.any((data.treatment == d) & (data.mediator == m)):
                raise EmptyCell(f"no observations with D={d}, M={m}")
    pipelines = ["ate", *estimators]
    if ms and "theorem1" not in pipelines:
        pipelines.append("theorem1")
    nuis = crossfit_nuisances(data, folds, pipelines, learner)

    cf: dict[str, CounterfactualEstimate] = {}
    for d in (1, 0):
        est = counterfactual(Target.ALPHA, data, nuis["ate"], folds, d, threshold=threshold)
        cf[est.label] = est
    for name, target in (("theorem1", Target.PSI), ("theorem2", Target.PSI_STAR)):
        if name in estimators:
            for d in (1, 0):
                est = counterfactual(target, data, nuis[name], folds, d, threshold=threshold)
                cf[est.label] = est
    controlled = {}
    for m in ms:
        pair = tuple(counterfactual(Target.PSI_DM, data, nuis["theorem1"], folds, d, m, threshold)
                     for d in (1, 0))
        for est in pair:
            cf[est.label] = est
        controlled[m] = pair

    reports = {}
    for name in estimators:
        prefix = "Psi" if name == "theorem1" else "PsiStar"
        reports[name] = assemble_effects(cf["Lambda_1"], cf["Lambda_0"], cf[f"{prefix}_1"],
                                         cf[f"{prefix}_0"], name, controlled)
    return MediationResult(reports, cf, folds)
