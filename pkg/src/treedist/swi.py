"""Stagewise-independent trees.

In a stagewise-independent (SWI) tree every node of a stage has the same
successor outcomes with the same conditional probabilities. Such a tree is
fully described by one marginal per stage. For two SWI trees and a stagewise
metric, the nested distance is the weighted sum of the per-stage
Wasserstein distances (on the d^p scale). :func:`nested_swi` computes it
that way, which needs T small transport problems instead of one per node
pair.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metric import StagewiseMetric
from .nested.dp import nested_dp
from .nested.table import NestedResult, NodeStageMismatchError, check_pair, path_distance_tables
from .transport import wasserstein_p
from .tree import DEFAULT_TOL, ProbabilityTree, StageMarginal, require_valid, stage_marginal

__all__ = [
    "SwiSpecError",
    "NotStagewiseIndependentError",
    "SwiSpec",
    "SwiReport",
    "build_swi_tree",
    "detect_swi",
    "nested_swi",
    "stage_wasserstein_terms",
    "IdentityReport",
    "subtree_identity_check",
    "subtree_identity_all",
]


class SwiSpecError(ValueError):
    pass


class NotStagewiseIndependentError(ValueError):
    def __init__(self, report: "SwiReport", which: str = ""):
        self.report = report
        self.which = which
        label = f"tree {which}" if which else "tree"
        super().__init__(f"{label} is not stagewise independent: {report.describe()}")


@dataclass(frozen=True, eq=False)
class SwiSpec:
    """One marginal per stage; the first one must be a single point (the root)."""

    stages: tuple[StageMarginal, ...]

    def __post_init__(self):
        stages = tuple(self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages:
            raise SwiSpecError("SWI description has no stages")
        if len(stages[0]) != 1:
            raise SwiSpecError(f"first stage must be a single point, got {len(stages[0])}")
        dims = {m.dimension for m in stages}
        if len(dims) != 1:
            raise SwiSpecError(f"stage marginals have different dimensions {sorted(dims)}")

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def sizes(self) -> list[int]:
        return [len(m) for m in self.stages]

    def check(self, tol: float = DEFAULT_TOL) -> "SwiSpec":
        for t, m in enumerate(self.stages, start=1):
            issues = m.problems(tol)
            if issues:
                raise SwiSpecError(f"stage {t}: " + "; ".join(issues))
        return self

    def same_as(self, other: "SwiSpec", tol: float = 0.0) -> bool:
        return self.n_stages == other.n_stages and all(
            a.same_distribution(b, tol) for a, b in zip(self.stages, other.stages)
        )


def build_swi_tree(spec: SwiSpec) -> ProbabilityTree:
    """Product tree: every stage-t node branches into all stage-(t+1) points."""
    spec.check()
    root = spec.stages[0]
    parents: list[int | None] = [None]
    outcomes = [root.points[0]]
    probs = [1.0]
    frontier = [0]
    for marginal in spec.stages[1:]:
        nxt = []
        for k in frontier:
            for point, q in zip(marginal.points, marginal.probs):
                parents.append(k)
                outcomes.append(point)
                probs.append(probs[k] * float(q))
                nxt.append(len(parents) - 1)
        frontier = nxt
    return ProbabilityTree.from_parents(parents, np.array(outcomes), probs)


@dataclass
class SwiReport:
    is_swi: bool
    spec: SwiSpec | None = None
    stage: int | None = None
    node: int | None = None  # node label, as in the tree's ids
    reference: int | None = None
    reason: str = ""

    def describe(self) -> str:
        if self.is_swi:
            return "stagewise independent"
        return f"stage {self.stage}: node {self.node} differs from node {self.reference}: {self.reason}"

    def to_dict(self) -> dict:
        out = {"swi": self.is_swi}
        if not self.is_swi:
            out["violation"] = {
                "stage": self.stage,
                "node": self.node,
                "reference": self.reference,
                "reason": self.reason,
            }
        return out


def _transitions(tree: ProbabilityTree, k: int) -> list[tuple[tuple, float]]:
    pk = tree.prob[k]
    return sorted((tuple(tree.outcomes[r]), float(tree.prob[r] / pk)) for r in tree.children[k])


def detect_swi(tree: ProbabilityTree, tol: float = DEFAULT_TOL) -> SwiReport:
    """Check that all nodes of each stage have the same successor outcomes (exact
    match) and conditional probabilities (within ``tol``), as multisets.

    Nodes with zero probability carry no mass and are not compared. On
    success the per-stage marginals are returned in ``report.spec``.
    """
    ids = tree.ids
    for t in range(1, tree.n_stages):
        nodes = [int(k) for k in tree.nodes_at(t) if tree.prob[k] > 0]
        if not nodes:
            continue
        ref = nodes[0]
        expected = _transitions(tree, ref)
        for k in nodes[1:]:
            got = _transitions(tree, k)
            if len(got) != len(expected):
                return SwiReport(False, stage=t, node=ids[k], reference=ids[ref],
                                 reason=f"{len(got)} successors instead of {len(expected)}")
            for (xo, xp), (yo, yp) in zip(got, expected):
                if xo != yo:
                    return SwiReport(False, stage=t, node=ids[k], reference=ids[ref],
                                     reason=f"successor outcome {list(xo)} has no match")
                if abs(xp - yp) > tol:
                    return SwiReport(False, stage=t, node=ids[k], reference=ids[ref],
                                     reason=f"conditional probability {xp:.17g} vs {yp:.17g}")
    stages = []
    for t in range(1, tree.n_stages + 1):
        if t == 1:
            stages.append(stage_marginal(tree, 1))
            continue
        ref = next(int(k) for k in tree.nodes_at(t - 1) if tree.prob[k] > 0)
        mass: dict[tuple, float] = {}
        for outcome, cond in _transitions(tree, ref):
            mass[outcome] = mass.get(outcome, 0.0) + cond
        points = np.array(list(mass.keys()), dtype=float).reshape(len(mass), tree.dimension)
        stages.append(StageMarginal(points, np.array(list(mass.values()))))
    return SwiReport(True, spec=SwiSpec(tuple(stages)))


def _stage_term(args) -> float:
    P, Q, metric, t = args
    return wasserstein_p(P, Q, metric, t)


def stage_wasserstein_terms(
    spec_a: SwiSpec, spec_b: SwiSpec, metric: StagewiseMetric, workers: int = 1
) -> list[float]:
    """Per-stage Wasserstein^p values, unweighted, ordered by stage."""
    tasks = [(P, Q, metric, t) for t, (P, Q) in enumerate(zip(spec_a.stages, spec_b.stages), start=1)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_stage_term, tasks))
    return [_stage_term(task) for task in tasks]


def _weighted_sum(weights: np.ndarray, terms: Sequence[float]) -> float:
    total = 0.0
    for w, term in zip(weights, terms):
        total += w * term
    return float(total)


def nested_swi(
    A: ProbabilityTree,
    B: ProbabilityTree,
    metric: StagewiseMetric,
    *,
    tol: float = DEFAULT_TOL,
    workers: int = 1,
) -> NestedResult:
    """Nested distance of two SWI trees as the weighted sum of stage Wasserstein distances.

    Raises :class:`NotStagewiseIndependentError` if either tree fails
    :func:`detect_swi`.
    """
    require_valid(A, tol)
    require_valid(B, tol)
    T = check_pair(A, B, metric)
    specs = []
    for name, tree in (("A", A), ("B", B)):
        report = detect_swi(tree, tol)
        if not report.is_swi:
            raise NotStagewiseIndependentError(report, name)
        specs.append(report.spec)
    terms = stage_wasserstein_terms(specs[0], specs[1], metric, workers)
    value = _weighted_sum(metric.weights_for(T), terms)
    return NestedResult(value, "swi", metric.p, stage_terms=terms)


@dataclass
class IdentityReport:
    stage: int
    table_value: float
    decomposed_value: float
    residual: float
    tol: float = 1e-8

    @property
    def passed(self) -> bool:
        return self.residual <= self.tol * max(1.0, abs(self.table_value))

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "table_value": self.table_value,
            "decomposed_value": self.decomposed_value,
            "residual": self.residual,
            "passed": self.passed,
        }


def _decomposition(A, B, metric):
    T = check_pair(A, B, metric)
    specs = []
    for name, tree in (("A", A), ("B", B)):
        report = detect_swi(tree)
        if not report.is_swi:
            raise NotStagewiseIndependentError(report, name)
        specs.append(report.spec)
    w = metric.weights_for(T)
    terms = stage_wasserstein_terms(specs[0], specs[1], metric)
    # remainder[t] = sum over stages after t of w * W^p, for 1-based t = 1..T
    remainder = [0.0] * (T + 1)
    for t in range(T - 1, -1, -1):
        remainder[t] = remainder[t + 1] + w[t] * terms[t]
    return path_distance_tables(A, B, metric), remainder


def subtree_identity_check(
    A: ProbabilityTree,
    B: ProbabilityTree,
    metric: StagewiseMetric,
    k: int,
    l: int,
    result: NestedResult | None = None,
    tol: float = 1e-8,
) -> IdentityReport:
    """Compare the DP sub-tree distance d^p(k, l) with the past stage distances
    of k and l plus the stage Wasserstein terms of all later stages."""
    t = int(A.stage[k])
    if t != B.stage[l]:
        raise NodeStageMismatchError(f"nodes {A.ids[k]} and {B.ids[l]} are at different stages")
    past, remainder = _decomposition(A, B, metric)
    if result is None or result.table is None:
        result = nested_dp(A, B, metric)
    lhs = result.table.value(k, l)
    rhs = float(past[t - 1][k - A.nodes_at(t)[0], l - B.nodes_at(t)[0]] + remainder[t])
    return IdentityReport(t, lhs, rhs, abs(lhs - rhs), tol)


def subtree_identity_all(
    A: ProbabilityTree,
    B: ProbabilityTree,
    metric: StagewiseMetric,
    result: NestedResult | None = None,
    tol: float = 1e-8,
) -> tuple[bool, float]:
    """Check the identity at every same-stage node pair; returns (passed, worst relative residual)."""
    past, remainder = _decomposition(A, B, metric)
    if result is None or result.table is None:
        result = nested_dp(A, B, metric)
    worst = 0.0
    for t in range(1, A.n_stages + 1):
        lhs = result.table.values[t - 1]
        rhs = past[t - 1] + remainder[t]
        rel = np.abs(lhs - rhs) / np.maximum(1.0, np.abs(lhs))
        worst = max(worst, float(rel.max()))
    return worst <= tol, worst
