"""Nested distance between staged trees: backward recursion and monolithic LPs."""

from .dp import nested_dp, subtree_distance
from .lp import (
    DEFAULT_LP_CAP,
    ConstraintEquivalenceReport,
    HomogeneityReport,
    LPSizeError,
    check_constraint_equivalence,
    check_homogeneity,
    lp_cap,
    nested_lp,
    phi,
)
from .table import (
    NestedResult,
    NodePairTable,
    NodeStageMismatchError,
    StageCountMismatchError,
    path_distance_tables,
)

__all__ = [
    "nested_dp",
    "nested_lp",
    "subtree_distance",
    "phi",
    "check_constraint_equivalence",
    "check_homogeneity",
    "ConstraintEquivalenceReport",
    "HomogeneityReport",
    "NestedResult",
    "NodePairTable",
    "LPSizeError",
    "StageCountMismatchError",
    "NodeStageMismatchError",
    "DEFAULT_LP_CAP",
    "lp_cap",
    "path_distance_tables",
]
