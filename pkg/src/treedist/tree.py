"""Staged probability trees.

A tree holds, for every node, its stage (1-based), its parent, an outcome
vector and its *unconditional* probability P(k). Conditional probabilities
are derived on demand. Trees are immutable once built; children lists and
per-stage node indexes are computed at construction time.

Internally nodes are stored in breadth-first order, so node index 0 is the
root and stage-t nodes form a contiguous block. The original node labels are
kept in :attr:`ProbabilityTree.ids` and are used in reports.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "TreeStructureError",
    "InvalidTreeError",
    "ZeroProbabilityError",
    "InvalidMarginalError",
    "ProbabilityTree",
    "StageMarginal",
    "ScenarioPath",
    "Violation",
    "ValidationReport",
    "validate",
    "require_valid",
    "conditional_probability",
    "stage_marginal",
    "tree_product",
    "scenarios",
    "path_extended_subtree",
]

DEFAULT_TOL = 1e-9


class TreeStructureError(ValueError):
    """The node list does not describe a rooted staged tree."""


class InvalidTreeError(ValueError):
    """A tree failed validation; carries the :class:`ValidationReport`."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        super().__init__(report.summary())


class ZeroProbabilityError(ZeroDivisionError):
    """Conditioning on a node with zero probability."""


class InvalidMarginalError(ValueError):
    def __init__(self, message: str, residual: float = 0.0):
        super().__init__(message)
        self.residual = residual


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class ProbabilityTree:
    """Rooted staged tree with per-node outcomes and unconditional probabilities.

    Parameters
    ----------
    ids, parents, stages, outcomes, probs
        Parallel per-node sequences. ``parents[n]`` is the id of the parent
        node, or ``None`` for the root.
    n_stages
        Declared number of stages T; inferred from the deepest node if omitted.
    """

    __slots__ = (
        "ids", "parent", "stage", "outcomes", "prob", "children",
        "n_stages", "dimension", "_stage_slices", "_index",
    )

    def __init__(
        self,
        ids: Sequence[int],
        parents: Sequence[int | None],
        stages: Sequence[int],
        outcomes: Sequence[Sequence[float]] | np.ndarray,
        probs: Sequence[float],
        n_stages: int | None = None,
    ):
        n = len(ids)
        if n == 0:
            raise TreeStructureError("tree has no nodes")
        if not (len(parents) == len(stages) == len(outcomes) == len(probs) == n):
            raise TreeStructureError("per-node field lengths differ")
        ids = [int(i) for i in ids]
        position = {}
        for pos, node_id in enumerate(ids):
            if node_id in position:
                raise TreeStructureError(f"duplicate node id {node_id}")
            position[node_id] = pos

        out = np.asarray(outcomes, dtype=float)
        if out.ndim == 1 and out.size == n:
            out = out.reshape(n, 1)
        if out.ndim != 2 or out.shape[0] != n:
            raise TreeStructureError("outcomes must be a list of equal-length vectors")

        roots = [pos for pos in range(n) if parents[pos] is None]
        if len(roots) != 1:
            raise TreeStructureError(f"expected exactly one root, found {len(roots)}")
        kids: list[list[int]] = [[] for _ in range(n)]
        for pos in range(n):
            par = parents[pos]
            if par is None:
                continue
            if int(par) not in position:
                raise TreeStructureError(f"node {ids[pos]} has unknown parent {par}")
            kids[position[int(par)]].append(pos)

        # breadth-first order, stable w.r.t. input order; unreachable nodes mean a cycle
        order: list[int] = []
        queue = deque(roots)
        while queue:
            pos = queue.popleft()
            order.append(pos)
            queue.extend(kids[pos])
        if len(order) != n:
            raise TreeStructureError("some nodes are not reachable from the root (cycle)")

        stage_arr = np.array([int(stages[pos]) for pos in order], dtype=np.int64)
        T = int(stage_arr.max()) if n_stages is None else int(n_stages)
        if T < 1:
            raise TreeStructureError("stage count must be at least 1")
        if stage_arr.min() < 1 or stage_arr.max() > T:
            raise TreeStructureError(f"node stages must lie in 1..{T}")

        new_index = {old: new for new, old in enumerate(order)}
        parent_arr = np.array(
            [-1 if parents[pos] is None else new_index[position[int(parents[pos])]] for pos in order],
            dtype=np.int64,
        )
        # BFS order is stage order only when each child sits one stage below its
        # parent; sort stably by stage so that stage blocks are contiguous anyway.
        by_stage = np.argsort(stage_arr, kind="stable")
        if not np.array_equal(by_stage, np.arange(n)):
            remap = np.empty(n, dtype=np.int64)
            remap[by_stage] = np.arange(n)
            order = [order[i] for i in by_stage]
            stage_arr = stage_arr[by_stage]
            parent_arr = np.where(parent_arr[by_stage] < 0, -1, remap[parent_arr[by_stage]])

        self.ids = tuple(ids[pos] for pos in order)
        self.parent = _frozen(parent_arr)
        self.stage = _frozen(stage_arr)
        self.outcomes = _frozen(np.ascontiguousarray(out[order]))
        self.prob = _frozen(np.array([float(probs[pos]) for pos in order]))
        children: list[list[int]] = [[] for _ in range(n)]
        for node in range(1, n):
            if parent_arr[node] >= 0:
                children[parent_arr[node]].append(node)
        self.children = tuple(tuple(c) for c in children)
        self.n_stages = T
        self.dimension = int(out.shape[1])
        bounds = np.searchsorted(stage_arr, np.arange(1, T + 2))
        self._stage_slices = tuple(slice(int(bounds[t]), int(bounds[t + 1])) for t in range(T))
        self._index = {node_id: i for i, node_id in enumerate(self.ids)}

    # --- construction helpers -------------------------------------------------

    @classmethod
    def from_nodes(cls, nodes: Iterable[Mapping], n_stages: int | None = None) -> "ProbabilityTree":
        nodes = list(nodes)
        return cls(
            ids=[nd["id"] for nd in nodes],
            parents=[nd["parent"] for nd in nodes],
            stages=[nd["stage"] for nd in nodes],
            outcomes=[nd["outcome"] for nd in nodes],
            probs=[nd["prob"] for nd in nodes],
            n_stages=n_stages,
        )

    @classmethod
    def from_parents(
        cls,
        parents: Sequence[int | None],
        outcomes: Sequence[Sequence[float]] | np.ndarray,
        probs: Sequence[float],
    ) -> "ProbabilityTree":
        """Build from positional parent indices; stages are inferred from depth."""
        n = len(parents)
        stages = [0] * n
        for i in range(n):
            depth, j = 1, parents[i]
            while j is not None:
                depth += 1
                j = parents[j]
                if depth > n:
                    raise TreeStructureError("cycle in parent list")
            stages[i] = depth
        return cls(list(range(n)), list(parents), stages, outcomes, probs)

    # --- queries --------------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.ids)

    @property
    def root(self) -> int:
        return 0

    def index_of(self, node_id: int) -> int:
        """Internal index of the node labelled ``node_id``."""
        try:
            return self._index[node_id]
        except KeyError:
            raise KeyError(f"no node with id {node_id}") from None

    def nodes_at(self, t: int) -> np.ndarray:
        """Indices of the stage-t nodes (1-based stage)."""
        if not 1 <= t <= self.n_stages:
            raise IndexError(f"stage {t} outside 1..{self.n_stages}")
        s = self._stage_slices[t - 1]
        return np.arange(s.start, s.stop)

    def is_leaf(self, k: int) -> bool:
        return not self.children[k]

    @property
    def leaves(self) -> np.ndarray:
        return np.array([k for k in range(self.n_nodes) if not self.children[k]], dtype=np.int64)

    def path(self, k: int) -> list[int]:
        """Node indices from the root down to ``k``."""
        out = [k]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out[::-1]

    def ancestor_at(self, k: int, t: int) -> int:
        while self.stage[k] > t:
            k = int(self.parent[k])
        return k

    def is_descendant(self, m: int, k: int) -> bool:
        """True when ``m`` lies in the subtree rooted at ``k`` (m = k included)."""
        if self.stage[m] < self.stage[k]:
            return False
        return self.ancestor_at(m, int(self.stage[k])) == k

    def subtree_leaves(self, k: int) -> list[int]:
        out, stack = [], [k]
        while stack:
            node = stack.pop()
            if self.children[node]:
                stack.extend(reversed(self.children[node]))
            else:
                out.append(node)
        return out

    def __repr__(self) -> str:
        return f"ProbabilityTree(stages={self.n_stages}, nodes={self.n_nodes}, dim={self.dimension})"

    def structurally_equal(self, other: "ProbabilityTree") -> bool:
        """Same shape, outcomes and probabilities (labels ignored)."""
        return (
            self.n_stages == other.n_stages
            and self.n_nodes == other.n_nodes
            and np.array_equal(self.parent, other.parent)
            and np.array_equal(self.outcomes, other.outcomes)
            and np.array_equal(self.prob, other.prob)
        )


@dataclass(frozen=True, eq=False)
class StageMarginal:
    """Finite distribution: distinct support points with probabilities."""

    points: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        probs = np.asarray(self.probs, dtype=float).reshape(-1)
        if pts.shape[0] != probs.shape[0]:
            raise InvalidMarginalError("points and probs have different lengths")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "probs", _frozen(probs))

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[Sequence[float], float]]) -> "StageMarginal":
        atoms = list(atoms)
        return cls(np.array([a[0] for a in atoms], dtype=float), np.array([a[1] for a in atoms]))

    def __len__(self) -> int:
        return len(self.probs)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def problems(self, tol: float = DEFAULT_TOL) -> list[str]:
        issues = []
        if len(self.probs) == 0:
            issues.append("empty support")
        if np.any(self.probs < 0):
            issues.append("negative probability")
        residual = float(self.probs.sum()) - 1.0
        if abs(residual) > tol:
            issues.append(f"probabilities sum to {self.probs.sum():.17g}, residual {residual:.3g}")
        if len({tuple(p) for p in self.points}) != len(self.points):
            issues.append("support points are not distinct")
        return issues

    def check(self, tol: float = DEFAULT_TOL) -> "StageMarginal":
        issues = self.problems(tol)
        if issues:
            raise InvalidMarginalError("; ".join(issues), residual=float(self.probs.sum()) - 1.0)
        return self

    def same_distribution(self, other: "StageMarginal", tol: float = 0.0) -> bool:
        """Equal as weighted point sets, ignoring the order of atoms."""
        if len(self) != len(other) or self.dimension != other.dimension:
            return False
        mine = dict(zip(map(tuple, self.points), self.probs))
        for pt, pr in zip(map(tuple, other.points), other.probs):
            if pt not in mine or abs(mine[pt] - pr) > tol:
                return False
        return True


@dataclass(frozen=True, eq=False)
class ScenarioPath:
    leaf: int
    outcomes: np.ndarray  # (T, dim)
    probability: float


@dataclass(frozen=True)
class Violation:
    code: str
    node: int | None
    residual: float
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        if self.ok:
            return "valid"
        return "; ".join(v.message for v in self.violations)

    def to_dict(self) -> dict:
        return {
            "valid": self.ok,
            "violations": [
                {"code": v.code, "node": v.node, "residual": v.residual, "message": v.message}
                for v in self.violations
            ],
        }


def validate(tree: ProbabilityTree, tol: float = DEFAULT_TOL) -> ValidationReport:
    """Check the probability-tree invariants; never raises."""
    report = ValidationReport()
    add = report.violations.append
    ids, P, T = tree.ids, tree.prob, tree.n_stages

    if tree.stage[0] != 1:
        add(Violation("root_stage", ids[0], float(tree.stage[0] - 1), f"root {ids[0]} is at stage {tree.stage[0]}, not 1"))
    if abs(P[0] - 1.0) > tol:
        add(Violation("root_prob", ids[0], float(P[0] - 1.0), f"root {ids[0]} has probability {P[0]:.17g}, not 1"))
    for k in range(tree.n_nodes):
        if P[k] < 0:
            add(Violation("negative_prob", ids[k], float(P[k]), f"node {ids[k]} has negative probability {P[k]:.17g}"))
        elif P[k] > 1.0 + tol:
            add(Violation("prob_above_one", ids[k], float(P[k] - 1.0), f"node {ids[k]} has probability {P[k]:.17g} > 1"))
        par = tree.parent[k]
        if par >= 0 and tree.stage[k] != tree.stage[par] + 1:
            add(Violation("stage_step", ids[k], float(tree.stage[k] - tree.stage[par] - 1),
                          f"node {ids[k]} at stage {tree.stage[k]} has parent at stage {tree.stage[par]}"))
        kids = tree.children[k]
        if kids:
            residual = float(sum(P[m] for m in kids) - P[k])
            if abs(residual) > tol:
                add(Violation("node_identity", ids[k], residual,
                              f"children of node {ids[k]} sum to {P[k] + residual:.17g}, expected {P[k]:.17g}"))
        elif tree.stage[k] != T:
            add(Violation("leaf_stage", ids[k], float(T - tree.stage[k]),
                          f"leaf {ids[k]} is at stage {tree.stage[k]}, not {T}"))
    leaf_total = float(sum(P[i] for i in tree.leaves))
    if abs(leaf_total - 1.0) > tol:
        add(Violation("leaf_sum", None, leaf_total - 1.0, f"leaf probabilities sum to {leaf_total:.17g}, not 1"))
    return report


def require_valid(tree: ProbabilityTree, tol: float = DEFAULT_TOL) -> ProbabilityTree:
    report = validate(tree, tol)
    if not report.ok:
        raise InvalidTreeError(report)
    return tree


def conditional_probability(tree: ProbabilityTree, m: int, k: int) -> float:
    """P(m | k): P(m)/P(k) when m is k or one of its descendants, else 0."""
    pk = tree.prob[k]
    if pk == 0:
        raise ZeroProbabilityError(f"cannot condition on node {tree.ids[k]} with zero probability")
    if not tree.is_descendant(m, k):
        return 0.0
    return float(tree.prob[m] / pk)


def stage_marginal(tree: ProbabilityTree, t: int) -> StageMarginal:
    """Distribution of the stage-t outcome, grouping nodes with identical outcomes."""
    nodes = tree.nodes_at(t)
    mass: dict[tuple, float] = {}
    for k in nodes:
        key = tuple(tree.outcomes[k])
        mass[key] = mass.get(key, 0.0) + float(tree.prob[k])
    points = np.array(list(mass.keys()), dtype=float).reshape(len(mass), tree.dimension)
    return StageMarginal(points, np.array(list(mass.values())))


def tree_product(a: ProbabilityTree, b: ProbabilityTree) -> ProbabilityTree:
    """Attach a copy of ``b`` below every leaf of ``a``.

    The root of ``b`` becomes a new stage under each leaf of ``a``, so the
    product has ``a.n_stages + b.n_stages`` stages and each scenario is the
    concatenation of an ``a``-scenario with a ``b``-scenario. Node
    probabilities in the copies are multiplied by the probability of the
    leaf they hang from.
    """
    if a.dimension != b.dimension:
        raise ValueError(f"outcome dimensions differ: {a.dimension} vs {b.dimension}")
    parents: list[int | None] = [None if p < 0 else int(p) for p in a.parent]
    outcomes = [row for row in a.outcomes]
    probs = list(a.prob)
    for leaf in a.leaves:
        offset = len(parents)
        for node in range(b.n_nodes):
            par = b.parent[node]
            parents.append(int(leaf) if par < 0 else offset + int(par))
            outcomes.append(b.outcomes[node])
            probs.append(a.prob[leaf] * b.prob[node])
    return ProbabilityTree.from_parents(parents, np.array(outcomes), probs)


def scenarios(tree: ProbabilityTree) -> list[ScenarioPath]:
    """One root-to-leaf path per leaf."""
    out = []
    for leaf in tree.leaves:
        nodes = tree.path(int(leaf))
        out.append(ScenarioPath(int(leaf), tree.outcomes[nodes].copy(), float(tree.prob[leaf])))
    return out


def path_extended_subtree(tree: ProbabilityTree, k: int) -> ProbabilityTree:
    """The root-to-``k`` path (probability 1) followed by the subtree at ``k``
    with probabilities conditioned on ``k``."""
    pk = tree.prob[k]
    if pk == 0:
        raise ZeroProbabilityError(f"node {tree.ids[k]} has zero probability")
    path = tree.path(k)
    parents: list[int | None] = [None] + list(range(len(path) - 1))
    outcomes = [tree.outcomes[n] for n in path]
    probs = [1.0] * len(path)
    stack = [(k, len(path) - 1)]
    while stack:
        node, new = stack.pop()
        for child in tree.children[node]:
            parents.append(new)
            outcomes.append(tree.outcomes[child])
            probs.append(float(tree.prob[child] / pk))
            stack.append((child, len(parents) - 1))
    return ProbabilityTree.from_parents(parents, np.array(outcomes), probs)
