"""Double machine learning for causal mediation analysis with a binary mediator."""

from __future__ import annotations

from .crossfit import (
    CounterfactualEstimate,
    crossfit_nuisances,
    run_algorithm1,
    run_algorithm2,
    run_ate_arm,
    run_controlled,
)
from .data import Dataset, FoldAssignment, make_folds, validate_dataset
from .effects import (
    Effect,
    EffectReport,
    MediationResult,
    assemble_effects,
    effect_se,
    estimate_effects,
    p_value,
)
from .scores import Target, evaluate_score
from .simulation import (
    SimulationDesign,
    closed_form_effects,
    generate_dgp,
    run_monte_carlo,
    true_effects_oracle,
)

__version__ = "0.1.0"

__all__ = [
    "CounterfactualEstimate",
    "Dataset",
    "Effect",
    "EffectReport",
    "FoldAssignment",
    "MediationResult",
    "SimulationDesign",
    "Target",
    "assemble_effects",
    "closed_form_effects",
    "crossfit_nuisances",
    "effect_se",
    "estimate_effects",
    "evaluate_score",
    "generate_dgp",
    "make_folds",
    "p_value",
    "run_algorithm1",
    "run_algorithm2",
    "run_ate_arm",
    "run_controlled",
    "run_monte_carlo",
    "true_effects_oracle",
    "validate_dataset",
]
