"""Per-observation score functions and trimming rules.

All functions are vectorized over observations. ``y``, ``D`` and ``M`` are the
observed outcome, treatment and mediator; nuisances come from a
:class:`~mediationdml.nuisance.NuisanceSet` aligned with them.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import NumericalOverflow
from .nuisance import NuisanceSet

DEFAULT_TRIM = 0.05


class Target(str, Enum):
    PSI = "psi"            # E[Y(d, M(1-d))], efficient score with mediator density
    PSI_STAR = "psi_star"  # same counterfactual, Bayes-rearranged score
    ALPHA = "alpha"        # E[Y(d, M(d))], doubly robust ATE score
    PSI_DM = "psi_dm"      # E[Y(d, m)], controlled counterfactual


def _finite(values: NDArray) -> NDArray:
    if not np.all(np.isfinite(values)):
        raise NumericalOverflow("score evaluation produced non-finite values")
    return values


def score_psi(y: ArrayLike, D: ArrayLike, M: ArrayLike, nu: NuisanceSet, d: int) -> NDArray:
    """Efficient score for E[Y(d, M(1-d))] using f(M | D, X)."""
    y, D, M = np.asarray(y, float), np.asarray(D), np.asarray(M)
    p = nu.p_d(d)
    mu_obs = nu.mu_at(d, M)
    nu_d = nu.nu[:, d]
    weight = nu.f(M, 1 - d) / (p * nu.f(M, d))
    return _finite(
        (D == d) * weight * (y - mu_obs)
        + (D == 1 - d) / (1.0 - p) * (mu_obs - nu_d)
        + nu_d
    )


def score_psi_star(y: ArrayLike, D: ArrayLike, M: ArrayLike, nu: NuisanceSet, d: int) -> NDArray:
    """Score for E[Y(d, M(1-d))] using Pr(D | M, X) and the nested mean omega."""
    y, D, M = np.asarray(y, float), np.asarray(D), np.asarray(M)
    p = nu.p_d(d)
    pm = nu.p_dm(d)
    mu_obs = nu.mu_at(d, M)
    om = nu.omega[:, d]
    return _finite(
        (D == d) * (1.0 - pm) / (pm * (1.0 - p)) * (y - mu_obs)
        + (D == 1 - d) / (1.0 - p) * (mu_obs - om)
        + om
    )


def score_alpha(y: ArrayLike, D: ArrayLike, nu: NuisanceSet, d: int) -> NDArray:
    """Doubly robust score for E[Y(d, M(d))]."""
    y, D = np.asarray(y, float), np.asarray(D)
    mu = nu.mu_dx[:, d]
    return _finite((D == d) * (y - mu) / nu.p_d(d) + mu)


def score_psi_dm(y: ArrayLike, D: ArrayLike, M: ArrayLike, nu: NuisanceSet, d: int, m: int) -> NDArray:
    """Doubly robust score for E[Y(d, m)]; Pr(D=d, M=m | X) = f(m|d,X) p_d(X)."""
    y, D, M = np.asarray(y, float), np.asarray(D), np.asarray(M)
    mu = nu.mu[:, d, m]
    return _finite((D == d) * (M == m) * (y - mu) / (nu.f(m, d) * nu.p_d(d)) + mu)


def denominators(target: Target | str, M: ArrayLike, nu: NuisanceSet, d: int,
                 m: int | None = None) -> list[NDArray]:
    """The probability terms (and products) dividing each score."""
    target = Target(target)
    p = nu.p_d(d)
    if target is Target.PSI:
        return [p * nu.f(np.asarray(M), d), 1.0 - p]
    if target is Target.PSI_STAR:
        return [nu.p_dm(d) * (1.0 - p), 1.0 - p]
    if target is Target.ALPHA:
        return [p]
    if m is None:
        raise ValueError("psi_dm needs a mediator value m")
    return [nu.f(m, d) * p]


def trim_flag(target: Target | str, M: ArrayLike, nu: NuisanceSet, d: int,
              m: int | None = None, threshold: float = DEFAULT_TRIM) -> NDArray[np.bool_]:
    """True where any denominator of the score falls below ``threshold``."""
    if not 0.0 < threshold < 0.5:
        raise ValueError("threshold must lie in (0, 0.5)")
    flags = np.zeros(nu.n, dtype=bool)
    for den in denominators(target, M, nu, d, m):
        flags |= den < threshold
    return flags


@dataclass(frozen=True, eq=False)
class ScoreVector:
    """Score values for every observation plus trimming flags.

    ``values`` covers all n rows (trimmed ones included) so that vectors for
    different targets can be aligned; use :attr:`retained` for the kept part.
    """

    target: Target
    d: int
    m: int | None
    values: NDArray[np.float64]
    trimmed: NDArray[np.bool_]
    threshold: float | None

    @property
    def retained(self) -> NDArray[np.float64]:
        return self.values[~self.trimmed]

    @property
    def label(self) -> str:
        name = {Target.PSI: "Psi", Target.PSI_STAR: "PsiStar", Target.ALPHA: "Lambda",
                Target.PSI_DM: "Psi"}[self.target]
        return f"{name}_{self.d}" + (f"{self.m}" if self.target is Target.PSI_DM else "")


def evaluate_score(
    target: Target | str,
    y: ArrayLike,
    D: ArrayLike,
    M: ArrayLike,
    nu: NuisanceSet,
    d: int,
    m: int | None = None,
    threshold: float | None = DEFAULT_TRIM,
) -> ScoreVector:
    """Score values and trim flags; ``threshold=None`` disables trimming."""
    target = Target(target)
    if target is Target.PSI:
        values = score_psi(y, D, M, nu, d)
    elif target is Target.PSI_STAR:
        values = score_psi_star(y, D, M, nu, d)
    elif target is Target.ALPHA:
        values = score_alpha(y, D, nu, d)
    else:
        if m is None:
            raise ValueError("psi_dm needs a mediator value m")
        values = score_psi_dm(y, D, M, nu, d, m)
    if threshold is None:
        trimmed = np.zeros(values.shape[0], dtype=bool)
    else:
        trimmed = trim_flag(target, M, nu, d, m, threshold)
    return ScoreVector(target, d, m if target is Target.PSI_DM else None, values, trimmed,
                       threshold)
