"""Tabular dynamic programming on two-atom return models."""

from .control import (
    ControlResult,
    optimality_certificate,
    risky_bellman_apply,
    safe_bellman_apply,
    svi,
)
from .dbo import DistFunction, dbo_apply, dbo_iterate, return_avars
from .diatomic import (
    DoubleQ,
    SpeSolve,
    alpha_coherence,
    diatomic_bellman_apply,
    spe,
)
from .dist import (
    Diatomic,
    DiscreteDist,
    avar_left,
    avar_left_dual,
    avar_right,
    expectation,
    mix,
    project_w2_diatomic,
    pushforward_affine,
    quantile,
    wasserstein,
)
from .mdp import (
    Mdp,
    Policy,
    QSolve,
    bellman_policy_op,
    evaluate_policy,
    is_balanced,
    load_mdp,
    optimal_action_sets,
    reduce_to_balanced,
    save_mdp,
    state_values,
    value_iteration,
)
from .risky_lp import build_risky_dual, build_risky_primal, duality_gap_check
from .robust import (
    AugmentedKernel,
    ConstrainedPermutation,
    bavar_vs_avar_gap,
    coherence_axioms_check,
    enumerate_constrained_permutations,
    in_uncertainty_set,
    permutation_kernel,
    risk_neutral_kernel,
    worst_best_case,
)
from .simplex import LpProblem, LpSolution, solve

__all__ = [
    "AugmentedKernel",
    "ConstrainedPermutation",
    "ControlResult",
    "Diatomic",
    "DiscreteDist",
    "DistFunction",
    "DoubleQ",
    "LpProblem",
    "LpSolution",
    "Mdp",
    "Policy",
    "QSolve",
    "SpeSolve",
    "alpha_coherence",
    "avar_left",
    "avar_left_dual",
    "avar_right",
    "bavar_vs_avar_gap",
    "bellman_policy_op",
    "build_risky_dual",
    "build_risky_primal",
    "coherence_axioms_check",
    "dbo_apply",
    "dbo_iterate",
    "diatomic_bellman_apply",
    "duality_gap_check",
    "enumerate_constrained_permutations",
    "evaluate_policy",
    "expectation",
    "in_uncertainty_set",
    "is_balanced",
    "load_mdp",
    "mix",
    "optimal_action_sets",
    "optimality_certificate",
    "permutation_kernel",
    "project_w2_diatomic",
    "pushforward_affine",
    "quantile",
    "reduce_to_balanced",
    "return_avars",
    "risk_neutral_kernel",
    "risky_bellman_apply",
    "safe_bellman_apply",
    "save_mdp",
    "solve",
    "spe",
    "state_values",
    "svi",
    "value_iteration",
    "wasserstein",
    "worst_best_case",
]

__version__ = "0.1.0"
