"""Self-contained checks of the score functions under oracle nuisances.

Each suite draws a large sample from the simulation design, evaluates scores
at the true nuisance functions (or controlled corruptions of them) and
compares against closed-form counterfactual means:

* moment condition: mean score at the truth matches the target;
* orthogonality: central finite-difference derivative of the mean score
  along smooth nuisance perturbations is near zero;
* multiple robustness: corrupting one nuisance keeps the mean on target,
  corrupting the outcome model together with a weighting model does not;
* Bayes identity: the two weighting schemes agree observation by observation;
* decomposition: estimated effects add up exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .effects import estimate_effects
from .nuisance import NuisanceSet
from .scores import Target, evaluate_score
from .simulation import (
    OracleLearner,
    SimulationDesign,
    closed_form_counterfactuals,
    generate_dgp,
    oracle_nuisances,
)

MEAN_STEP = 0.5
PROB_STEP = 0.1
FD_STEP = 1e-3
ORTHOGONALITY_BOUND = 0.02
CONTROL_MIN_DERIVATIVE = 0.25
BAYES_BOUND = 1e-10
DECOMPOSITION_BOUND = 1e-12
Z_BOUND = 3.0

# nuisance components entering each score (names as in NuisanceSet.from_components)
SCORE_COMPONENTS = {
    Target.PSI: ("p1x", "f1", "mu"),
    Target.PSI_STAR: ("p1x", "p1mx", "mu", "omega"),
    Target.ALPHA: ("p1x", "mu_dx"),
    Target.PSI_DM: ("p1x", "f1", "mu"),
}
PROBABILITY_COMPONENTS = ("p1x", "f1", "p1mx")


@dataclass(frozen=True)
class Check:
    label: str
    statistic: float
    threshold: float
    passed: bool
    relation: str = "<="


@dataclass
class SuiteResult:
    name: str
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, label, statistic, threshold, relation="<="):
        ok = statistic <= threshold if relation == "<=" else statistic >= threshold
        self.checks.append(Check(label, float(statistic), float(threshold), bool(ok), relation))

    def worst(self) -> Check:
        failing = [c for c in self.checks if not c.passed]
        if failing:
            return failing[0]
        return max(self.checks, key=lambda c: c.statistic / c.threshold if c.relation == "<="
                   else c.threshold / max(c.statistic, 1e-300))


@dataclass
class OracleSample:
    design: SimulationDesign
    data: Dataset
    nuisances: NuisanceSet
    components: dict[str, np.ndarray]
    truth: dict[str, float]

    @property
    def x1(self) -> np.ndarray:
        return self.data.covariates[:, 0]


def oracle_sample(design: SimulationDesign | None = None, n: int = 100_000,
                  seed: int = 20240101) -> OracleSample:
    design = SimulationDesign() if design is None else design
    data = generate_dgp(design, seed, n=n)
    nu = oracle_nuisances(design, data)
    comps = {name: getattr(nu, name) for name in ("p1x", "f1", "mu", "mu_dx", "p1mx", "omega")}
    return OracleSample(design, data, nu, comps, closed_form_counterfactuals(design))


def target_truth(sample: OracleSample, target: Target, d: int, m: int | None = None) -> float:
    if target is Target.ALPHA:
        return sample.truth[f"Y({d},M({d}))"]
    if target is Target.PSI_DM:
        return sample.truth[f"Y({d},{m})"]
    return sample.truth[f"Y({d},M({1 - d}))"]


def perturbation(sample: OracleSample, component: str, kind: str) -> np.ndarray:
    """Direction h for one nuisance component: a constant shift or a tanh(X1) tilt."""
    size = PROB_STEP if component in PROBABILITY_COMPONENTS else MEAN_STEP
    if kind == "zero":
        base = np.zeros(sample.data.n)
    elif kind == "shift":
        base = np.full(sample.data.n, size)
    elif kind == "tilt":
        base = size * np.tanh(sample.x1)
    else:
        raise ValueError(f"unknown direction kind {kind!r}")
    shape = sample.components[component].shape
    return np.broadcast_to(base.reshape((-1,) + (1,) * (len(shape) - 1)), shape)


def _nuisances(sample: OracleSample, overrides: dict[str, np.ndarray]) -> NuisanceSet:
    comps = dict(sample.components)
    comps.update(overrides)
    return NuisanceSet.from_components(**comps)


def mean_score(sample: OracleSample, target: Target | str, nu: NuisanceSet, d: int,
               m: int | None = None) -> float:
    """Untrimmed mean score; target ``"plugin"`` is the non-orthogonal mean of nu."""
    if target == "plugin":
        return float(np.mean(nu.nu[:, d]))
    data = sample.data
    sv = evaluate_score(target, data.outcome, data.treatment, data.mediator, nu, d, m, None)
    return float(np.mean(sv.values))


def orthogonality_check(score_kind: Target | str, component: str, kind: str = "shift",
                        sample: OracleSample | None = None, step: float = FD_STEP,
                        d: int = 1, m: int | None = None) -> float:
    """Central difference [g(+step) - g(-step)] / (2 step) of the mean score.

    g(r) is the mean score with ``component`` replaced by eta_0 + r h.
    """
    sample = oracle_sample() if sample is None else sample
    h = perturbation(sample, component, kind)
    eta0 = sample.components[component]
    g = [mean_score(sample, score_kind, _nuisances(sample, {component: eta0 + r * h}), d, m)
         for r in (step, -step)]
    return (g[0] - g[1]) / (2.0 * step)


def moment_suite(sample: OracleSample) -> SuiteResult:
    res = SuiteResult("moment condition")
    data = sample.data
    for target, d, m in _score_grid():
        sv = evaluate_score(target, data.outcome, data.treatment, data.mediator,
                            sample.nuisances, d, m, None)
        dev = abs(sv.values.mean() - target_truth(sample, target, d, m))
        bound = Z_BOUND * sv.values.std() / np.sqrt(data.n)
        res.add(f"{sv.label}: |mean - truth|", dev, bound)
    return res


def _score_grid():
    for target in (Target.PSI, Target.PSI_STAR, Target.ALPHA):
        for d in (1, 0):
            yield target, d, None
    for d in (1, 0):
        for m in (1, 0):
            yield Target.PSI_DM, d, m


def orthogonality_suite(sample: OracleSample, inject_nonorthogonal: bool = False) -> SuiteResult:
    """Finite-difference derivatives along every nuisance direction.

    With ``inject_nonorthogonal`` the efficient score is swapped for the
    plug-in mean, which must then fail.
    """
    res = SuiteResult("orthogonality")
    for target, d, m in _score_grid():
        kind = "plugin" if inject_nonorthogonal and target is Target.PSI else target
        label = "plugin" if kind == "plugin" else target.value
        for comp in SCORE_COMPONENTS[target]:
            for direction in ("shift", "tilt"):
                deriv = orthogonality_check(kind, comp, direction, sample, d=d, m=m)
                suffix = f" m={m}" if m is not None else ""
                res.add(f"{label} d={d}{suffix} along {comp} {direction}: |g'(0)|",
                        abs(deriv), ORTHOGONALITY_BOUND)
    for d in (1, 0):
        deriv = orthogonality_check("plugin", "mu", "shift", sample, d=d)
        res.add(f"plug-in control d={d} along mu shift: |g'(0)|", abs(deriv),
                CONTROL_MIN_DERIVATIVE, ">=")
    return res


def corruptions(sample: OracleSample) -> dict[str, dict[str, np.ndarray]]:
    """Misspecified versions of each nuisance component."""
    design = sample.design
    X = sample.data.covariates
    index = X @ design.beta
    wrong_mean = MEAN_STEP + MEAN_STEP * np.tanh(sample.x1)
    comps = sample.components
    return {
        "mu": {"mu": comps["mu"] + wrong_mean[:, None, None],
               "mu_dx": comps["mu_dx"] + wrong_mean[:, None]},
        "p": {"p1x": norm.cdf(index + 0.5)},
        "f": {"f1": np.column_stack([norm.cdf(0.5 * d + index + 0.7) for d in (0, 1)])},
        "pm": {"p1mx": norm.cdf(norm.ppf(comps["p1mx"]) + 0.5)},
        "omega": {"omega": comps["omega"] + wrong_mean[:, None]},
    }


ROBUST_SINGLES = {
    Target.PSI: ("mu", "f", "p"),
    Target.PSI_STAR: ("mu", "omega", "p", "pm"),
    Target.ALPHA: ("mu", "p"),
    Target.PSI_DM: ("mu", "f", "p"),
}
ROBUST_DOUBLES = {
    Target.PSI: ("mu", "p"),
    Target.PSI_STAR: ("mu", "pm"),
    Target.ALPHA: ("mu", "p"),
    Target.PSI_DM: ("mu", "p"),
}


def robustness_suite(sample: OracleSample) -> SuiteResult:
    res = SuiteResult("multiple robustness")
    wrong = corruptions(sample)
    data = sample.data
    for target, d, m in _score_grid():
        truth = target_truth(sample, target, d, m)
        cases = [((name,), "<=") for name in ROBUST_SINGLES[target]]
        cases.append((ROBUST_DOUBLES[target], ">="))
        for names, relation in cases:
            overrides = {}
            for name in names:
                overrides.update(wrong[name])
            nu = _nuisances(sample, overrides)
            sv = evaluate_score(target, data.outcome, data.treatment, data.mediator,
                                nu, d, m, None)
            z = abs(sv.values.mean() - truth) / (sv.values.std() / np.sqrt(data.n))
            res.add(f"{sv.label} with wrong {'+'.join(names)}: |z|", z, Z_BOUND, relation)
    return res


def bayes_suite(sample: OracleSample) -> SuiteResult:
    """f(M|1-d)/(p_d f(M|d)) against (1-p_d(M,X))/(p_d(M,X)(1-p_d))."""
    res = SuiteResult("Bayes identity")
    nu = sample.nuisances
    for d in (1, 0):
        for m in (0, 1):
            w_density = nu.f(m, 1 - d) / (nu.p_d(d) * nu.f(m, d))
            pm = _oracle_pm(sample, d, m)
            w_bayes = (1.0 - pm) / (pm * (1.0 - nu.p_d(d)))
            res.add(f"d={d} m={m}: max |weight difference|",
                    np.max(np.abs(w_density - w_bayes)), BAYES_BOUND)
    return res


def _oracle_pm(sample: OracleSample, d: int, m: int) -> np.ndarray:
    p1 = OracleLearner(sample.design).fit_treatment_propensity(None, True).prob_treated(
        sample.data.covariates, np.full(sample.data.n, m))
    return p1 if d == 1 else 1.0 - p1


def decomposition_suite(design: SimulationDesign | None = None, n: int = 1000,
                        seed: int = 7) -> SuiteResult:
    res = SuiteResult("decomposition identities")
    design = SimulationDesign(p=50) if design is None else design
    result = estimate_effects(generate_dgp(design, seed, n=n), seed=seed, score="both")
    for name, rep in result.reports.items():
        res.add(f"{name}: |theta(1) + delta(0) - Delta|",
                abs(rep.theta1.estimate + rep.delta0.estimate - rep.delta.estimate),
                DECOMPOSITION_BOUND)
        res.add(f"{name}: |theta(0) + delta(1) - Delta|",
                abs(rep.theta0.estimate + rep.delta1.estimate - rep.delta.estimate),
                DECOMPOSITION_BOUND)
    return res


def run_all(n: int = 100_000, seed: int = 20240101, design: SimulationDesign | None = None,
            inject_nonorthogonal: bool = False) -> list[SuiteResult]:
    """Every suite in order; the oracle sample is drawn once and shared."""
    sample = oracle_sample(design, n, seed)
    runners = [
        lambda: moment_suite(sample),
        lambda: orthogonality_suite(sample, inject_nonorthogonal),
        lambda: robustness_suite(sample),
        lambda: bayes_suite(sample),
        lambda: decomposition_suite(seed=seed),
    ]
    out = []
    for run in runners:
        start = time.perf_counter()
        suite = run()
        suite.seconds = time.perf_counter() - start
        out.append(suite)
    return out


def format_report(suites: list[SuiteResult], verbose: bool = False) -> str:
    lines = []
    for suite in suites:
        worst = suite.worst()
        status = "PASS" if suite.passed else "FAIL"
        op = "<=" if worst.relation == "<=" else ">="
        lines.append(f"[{status}] {suite.name}: {len(suite.checks)} checks, "
                     f"worst {worst.label} = {worst.statistic:.3g} (need {op} {worst.threshold:.3g})")
        if verbose or not suite.passed:
            for c in suite.checks:
                if verbose or not c.passed:
                    mark = "ok  " if c.passed else "FAIL"
                    lines.append(f"    {mark} {c.label} = {c.statistic:.3g} "
                                 f"({c.relation} {c.threshold:.3g})")
    return "\n".join(lines)
