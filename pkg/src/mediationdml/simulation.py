"""Simulation design, ground truth, oracle nuisances and the Monte Carlo harness.

Data generating process (index I = X'beta, beta_i = scale / i^2):

    D = 1{I + W > 0}
    M = 1{0.5 D + I + V > 0}
    Y = 0.5 D + a M + b D M + I + U
    X ~ N(0, Sigma), Sigma_ij = 0.5^|i-j| (or identity), U, V, W ~ N(0, 1)

with a = ``mediator_coef`` (default 1.0) and b = ``interaction_coef``
(default 0.5).
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import toeplitz
from scipy.stats import norm

from .data import Dataset, validate_dataset
from .effects import EFFECT_NAMES, ESTIMATORS, estimate_effects
from .errors import MediationError
from .nuisance import NuisanceSet

EFFECT_LABELS = {
    "delta": "Delta",
    "theta1": "theta(1)",
    "theta0": "theta(0)",
    "delta1": "delta(1)",
    "delta0": "delta(0)",
}
TREATMENT_SHIFT = 0.5   # coefficient of D in the outcome equation
MEDIATOR_SHIFT = 0.5    # coefficient of D in the mediator equation
MAX_FAILURE_SHARE = 0.01


@dataclass(frozen=True)
class SimulationDesign:
    n: int = 1000
    p: int = 200
    coef_scale: float = 0.3
    sigma_kind: str = "toeplitz"
    replications: int = 250
    K: int = 3
    threshold: float = 0.05
    base_seed: int = 0
    mediator_coef: float = 1.0
    interaction_coef: float = 0.5

    def __post_init__(self):
        if self.coef_scale < 0:
            raise ValueError("coef_scale must be non-negative")
        if self.p < 1 or self.n < 2 or self.replications < 1:
            raise ValueError("need p >= 1, n >= 2 and at least one replication")
        if self.sigma_kind not in ("toeplitz", "identity"):
            raise ValueError("sigma_kind must be 'toeplitz' or 'identity'")
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if not 0.0 < self.threshold < 0.5:
            raise ValueError("threshold must lie in (0, 0.5)")

    @property
    def beta(self) -> NDArray[np.float64]:
        return self.coef_scale / np.arange(1, self.p + 1) ** 2

    @property
    def sigma(self) -> NDArray[np.float64]:
        return _sigma(self.p, self.sigma_kind)

    @property
    def index_variance(self) -> float:
        """Var(X'beta)."""
        b = self.beta
        return float(b @ self.sigma @ b)


@lru_cache(maxsize=8)
def _sigma(p: int, kind: str) -> NDArray:
    if kind == "identity":
        return np.eye(p)
    return toeplitz(0.5 ** np.arange(p))


@lru_cache(maxsize=8)
def _chol(p: int, kind: str) -> NDArray:
    return np.linalg.cholesky(_sigma(p, kind))


def draw_covariates(design: SimulationDesign, n: int, rng: np.random.Generator) -> NDArray:
    z = rng.standard_normal((n, design.p))
    if design.sigma_kind == "identity":
        return z
    return z @ _chol(design.p, design.sigma_kind).T


def outcome_mean(design: SimulationDesign, d, m, index):
    """E[Y | D=d, M=m, X] as a function of the index X'beta."""
    return (TREATMENT_SHIFT * d + design.mediator_coef * m
            + design.interaction_coef * d * m + index)


def generate_dgp(design: SimulationDesign, replication_seed: int | None,
                 n: int | None = None) -> Dataset:
    """One observed sample from the design (``n`` overrides ``design.n``)."""
    n = design.n if n is None else n
    rng = np.random.default_rng(replication_seed)
    X = draw_covariates(design, n, rng)
    index = X @ design.beta
    W = rng.standard_normal(n)
    V = rng.standard_normal(n)
    U = rng.standard_normal(n)
    D = (index + W > 0).astype(np.int8)
    M = (MEDIATOR_SHIFT * D + index + V > 0).astype(np.int8)
    Y = outcome_mean(design, D, M, index) + U
    return validate_dataset(Y, D, M, X)


# --- ground truth ------------------------------------------------------------


@dataclass(frozen=True)
class TrueEffects:
    delta: float
    theta1: float
    theta0: float
    delta1: float
    delta0: float
    counterfactuals: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in EFFECT_NAMES}


def _effects_from_potential_means(ey: dict[tuple[int, int], float], extra=None) -> TrueEffects:
    # ey[(d, d')] = E[Y(d, M(d'))]
    return TrueEffects(
        delta=ey[1, 1] - ey[0, 0],
        theta1=ey[1, 1] - ey[0, 1],
        theta0=ey[1, 0] - ey[0, 0],
        delta1=ey[1, 1] - ey[1, 0],
        delta0=ey[0, 1] - ey[0, 0],
        counterfactuals=extra or {},
    )


def mediator_share(design: SimulationDesign, d: int) -> float:
    """E[M(d)] = Phi(0.5 d / sqrt(1 + Var(X'beta)))."""
    return float(norm.cdf(MEDIATOR_SHIFT * d / math.sqrt(1.0 + design.index_variance)))


def closed_form_counterfactuals(design: SimulationDesign) -> dict[str, float]:
    """Exact E[Y(d, M(d'))] and E[Y(d, m)] implied by the structural equations."""
    out = {}
    for d in (0, 1):
        for dp in (0, 1):
            out[f"Y({d},M({dp}))"] = float(outcome_mean(design, d, mediator_share(design, dp), 0.0))
        for m in (0, 1):
            out[f"Y({d},{m})"] = float(outcome_mean(design, d, m, 0.0))
    return out


def closed_form_effects(design: SimulationDesign) -> TrueEffects:
    cf = closed_form_counterfactuals(design)
    ey = {(d, dp): cf[f"Y({d},M({dp}))"] for d in (0, 1) for dp in (0, 1)}
    return _effects_from_potential_means(ey, cf)


def true_effects_oracle(
    coef_scale: float,
    n_mc: int = 1_000_000,
    seed: int = 0,
    *,
    design: SimulationDesign | None = None,
    chunk: int = 100_000,
) -> TrueEffects:
    """Effects by drawing potential mediators and outcomes from the structural model.

    Uses the same U for every potential outcome, so decomposition identities
    hold within the sample up to rounding.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be positive")
    design = SimulationDesign(coef_scale=coef_scale) if design is None else replace(
        design, coef_scale=coef_scale)
    rng = np.random.default_rng(seed)
    sums = {(d, dp): 0.0 for d in (0, 1) for dp in (0, 1)}
    done = 0
    while done < n_mc:
        size = min(chunk, n_mc - done)
        index = draw_covariates(design, size, rng) @ design.beta
        V = rng.standard_normal(size)
        U = rng.standard_normal(size)
        m_pot = {dp: (MEDIATOR_SHIFT * dp + index + V > 0).astype(float) for dp in (0, 1)}
        for d in (0, 1):
            for dp in (0, 1):
                sums[d, dp] += float(np.sum(outcome_mean(design, d, m_pot[dp], index) + U))
        done += size
    ey = {key: total / n_mc for key, total in sums.items()}
    return _effects_from_potential_means(ey, {f"Y({d},M({dp}))": v for (d, dp), v in ey.items()})


# --- oracle nuisances --------------------------------------------------------


class _OraclePropensity:
    def __init__(self, design, include_mediator):
        self.design = design
        self.include_mediator = include_mediator

    def prob_treated(self, X, M=None):
        index = np.asarray(X) @ self.design.beta
        p1 = norm.cdf(index)
        if not self.include_mediator:
            return p1
        M = np.asarray(M)
        f1 = norm.cdf(MEDIATOR_SHIFT + index)
        f0 = norm.cdf(index)
        num = p1 * np.where(M == 1, f1, 1.0 - f1)
        return num / (num + (1.0 - p1) * np.where(M == 1, f0, 1.0 - f0))


class _OracleMediator:
    def __init__(self, design):
        self.design = design

    def prob_m1(self, d, X):
        return norm.cdf(MEDIATOR_SHIFT * np.asarray(d) + np.asarray(X) @ self.design.beta)


class _OracleOutcome:
    def __init__(self, design):
        self.design = design

    def predict(self, d, m, X):
        return outcome_mean(self.design, np.asarray(d), np.asarray(m),
                            np.asarray(X) @ self.design.beta)


class _OracleArmMean:
    def __init__(self, design, d):
        self.design = design
        self.d = d

    def predict(self, X):
        index = np.asarray(X) @ self.design.beta
        f1 = norm.cdf(MEDIATOR_SHIFT * self.d + index)
        return outcome_mean(self.design, self.d, f1, index)


class _OracleNested:
    def __init__(self, design, d):
        self.design = design
        self.d = d

    def predict(self, X):
        index = np.asarray(X) @ self.design.beta
        f1 = norm.cdf(MEDIATOR_SHIFT * (1 - self.d) + index)
        return outcome_mean(self.design, self.d, f1, index)


class OracleLearner:
    """Drop-in learner returning the true nuisance functions of a design."""

    def __init__(self, design: SimulationDesign):
        self.design = design

    def fit_treatment_propensity(self, train, include_mediator=False):
        return _OraclePropensity(self.design, include_mediator)

    def fit_mediator_density(self, train):
        return _OracleMediator(self.design)

    def fit_outcome_mean(self, train):
        return _OracleOutcome(self.design)

    def fit_conditional_mean_d(self, train, d):
        return _OracleArmMean(self.design, d)

    def fit_nested_mean(self, train_mu, train_nest, d, mu_predictor=None):
        return _OracleNested(self.design, d)


def oracle_nuisances(design: SimulationDesign, data: Dataset) -> NuisanceSet:
    """Every nuisance field at its true value for the rows of ``data``."""
    X = data.covariates
    n = data.n
    learner = OracleLearner(design)
    mu = np.empty((n, 2, 2))
    for d in (0, 1):
        for m in (0, 1):
            mu[:, d, m] = learner.fit_outcome_mean(None).predict(d, m, X)
    mediator = learner.fit_mediator_density(None)
    return NuisanceSet.from_components(
        p1x=learner.fit_treatment_propensity(None).prob_treated(X),
        f1=np.column_stack([mediator.prob_m1(0, X), mediator.prob_m1(1, X)]),
        mu=mu,
        mu_dx=np.column_stack([_OracleArmMean(design, d).predict(X) for d in (0, 1)]),
        p1mx=learner.fit_treatment_propensity(None, True).prob_treated(X, data.mediator),
        omega=np.column_stack([_OracleNested(design, d).predict(X) for d in (0, 1)]),
    )


# --- Monte Carlo -------------------------------------------------------------


@dataclass(frozen=True)
class EffectMetrics:
    mean_bias: float
    abias: float
    sd: float
    rmse: float
    mean_se: float
    se_abias: float
    se_sd: float
    se_rmse: float


def summarize(estimates: NDArray, ses: NDArray, truth: float) -> EffectMetrics:
    """Bias/sd/rmse of estimates and of their standard errors.

    Standard deviations use the 1/R normalisation so that
    rmse^2 = bias^2 + sd^2 holds exactly. The reference for the standard
    errors is the replication sd of the estimates.
    """
    estimates = np.asarray(estimates, float)
    ses = np.asarray(ses, float)
    bias = float(np.mean(estimates - truth))
    sd = float(np.std(estimates))
    rmse = float(np.sqrt(np.mean((estimates - truth) ** 2)))
    return EffectMetrics(
        mean_bias=bias,
        abias=abs(bias),
        sd=sd,
        rmse=rmse,
        mean_se=float(np.mean(ses)),
        se_abias=float(abs(np.mean(ses) - sd)),
        se_sd=float(np.std(ses)),
        se_rmse=float(np.sqrt(np.mean((ses - sd) ** 2))),
    )


@dataclass(eq=False)
class MetricsTable:
    design: SimulationDesign
    truth: dict[str, float]
    cells: dict[str, dict[str, EffectMetrics]]
    trimmed: dict[str, float]
    n_success: int
    n_failed: int
    failures: list[str]
    draws: dict[str, dict[str, NDArray]] = field(default_factory=dict, repr=False)
    seconds: float = 0.0

    @property
    def valid(self) -> bool:
        return self.n_failed < MAX_FAILURE_SHARE * self.design.replications or self.n_failed == 0

    def to_dict(self) -> dict:
        return {
            "design": asdict(self.design),
            "truth": dict(self.truth),
            "estimators": {
                est: {
                    "effects": {name: asdict(m) for name, m in cells.items()},
                    "trimmed": self.trimmed[est],
                }
                for est, cells in self.cells.items()
            },
            "replications": {"succeeded": self.n_success, "failed": self.n_failed,
                             "valid": self.valid, "failures": list(self.failures)},
        }

    def to_text(self) -> str:
        d = self.design
        lines = [
            f"Simulation results (n={d.n}, p={d.p}, coefficients {d.coef_scale}/i^2, "
            f"{d.sigma_kind} covariance, {self.n_success} replications)",
        ]
        header = f"{'':>11} {'abias':>7} {'sd':>7} {'rmse':>7} {'true':>7}"
        for est, cells in self.cells.items():
            lines += ["", f"Effect estimates, {est}", header]
            for name, m in cells.items():
                lines.append(f"{EFFECT_LABELS[name]:>11} {m.abias:7.2f} {m.sd:7.2f} "
                             f"{m.rmse:7.2f} {self.truth[name]:7.2f}")
            lines.append(f"{'trimmed':>11} {self.trimmed[est]:7.2f}")
            lines += ["", f"Standard errors, {est}", header]
            for name, m in cells.items():
                lines.append(f"{'se ' + EFFECT_LABELS[name]:>11} {m.se_abias:7.2f} "
                             f"{m.se_sd:7.2f} {m.se_rmse:7.2f} {m.sd:7.2f}")
        if self.n_failed:
            lines += ["", f"{self.n_failed} replication(s) failed"]
        return "\n".join(lines)


def run_replication(design: SimulationDesign, r: int) -> dict:
    """One draw: both estimators' effects, standard errors and trim counts."""
    seed = design.base_seed + r
    data = generate_dgp(design, seed)
    try:
        res = estimate_effects(data, K=design.K, seed=seed, threshold=design.threshold,
                               score="both")
    except (MediationError, np.linalg.LinAlgError) as exc:
        return {"replication": r, "error": f"{type(exc).__name__}: {exc}"}
    out = {"replication": r}
    for est, rep in res.reports.items():
        out[est] = {
            "estimate": {name: eff.estimate for name, eff in rep.effects().items()},
            "se": {name: eff.se for name, eff in rep.effects().items()},
            "trimmed": rep.trimmed_n,
        }
    return out


def run_monte_carlo(design: SimulationDesign, n_jobs: int = 1, progress=None) -> MetricsTable:
    """Replicate the design and aggregate Table-1 style metrics.

    Replication r uses seed ``base_seed + r`` for both the data and the folds.
    Failed replications are excluded and counted.
    """
    start = time.perf_counter()
    reps = range(design.replications)
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run_replication, [design] * len(reps), reps))
    else:
        results = []
        for r in reps:
            results.append(run_replication(design, r))
            if progress is not None:
                progress(r + 1, design.replications)

    truth = closed_form_effects(design).as_dict()
    ok = [res for res in results if "error" not in res]
    failures = [f"replication {res['replication']}: {res['error']}"
                for res in results if "error" in res]
    cells, trimmed, draws = {}, {}, {}
    for est in ESTIMATORS:
        if not ok:
            continue
        cells[est], draws[est] = {}, {}
        for name in EFFECT_NAMES:
            values = np.array([res[est]["estimate"][name] for res in ok])
            ses = np.array([res[est]["se"][name] for res in ok])
            cells[est][name] = summarize(values, ses, truth[name])
            draws[est][name] = values
            draws[est][name + "_se"] = ses
        trimmed[est] = float(np.mean([res[est]["trimmed"] for res in ok]))
    return MetricsTable(design, truth, cells, trimmed, len(ok), len(failures), failures,
                        draws, time.perf_counter() - start)
