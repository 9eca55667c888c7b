"""Wasserstein and nested distances between discrete distributions and scenario trees.

The nested distance is computed by backward recursion over node pairs
(:func:`nested_dp`), by a monolithic linear program (:func:`nested_lp`), or,
for stagewise-independent trees, as a weighted sum of per-stage Wasserstein
distances (:func:`nested_swi`).
"""

from .metric import StagewiseMetric, ground_distance_p, scenario_distance_p
from .nested import (
    NestedResult,
    NodePairTable,
    check_constraint_equivalence,
    check_homogeneity,
    nested_dp,
    nested_lp,
    subtree_distance,
)
from .reduction import ReductionResult, reduce_swi, weighted_kmeans
from .swi import (
    SwiReport,
    SwiSpec,
    build_swi_tree,
    detect_swi,
    nested_swi,
    subtree_identity_all,
    subtree_identity_check,
)
from .transport import TransportPlan, TransportProblem, solve_transport, wasserstein_p
from .tree import (
    ProbabilityTree,
    ScenarioPath,
    StageMarginal,
    ValidationReport,
    conditional_probability,
    path_extended_subtree,
    scenarios,
    stage_marginal,
    tree_product,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "ProbabilityTree",
    "StageMarginal",
    "ScenarioPath",
    "ValidationReport",
    "validate",
    "conditional_probability",
    "stage_marginal",
    "tree_product",
    "scenarios",
    "path_extended_subtree",
    "StagewiseMetric",
    "ground_distance_p",
    "scenario_distance_p",
    "TransportProblem",
    "TransportPlan",
    "solve_transport",
    "wasserstein_p",
    "NestedResult",
    "NodePairTable",
    "nested_dp",
    "nested_lp",
    "subtree_distance",
    "check_constraint_equivalence",
    "check_homogeneity",
    "SwiSpec",
    "SwiReport",
    "build_swi_tree",
    "detect_swi",
    "nested_swi",
    "subtree_identity_check",
    "subtree_identity_all",
    "ReductionResult",
    "reduce_swi",
    "weighted_kmeans",
]
