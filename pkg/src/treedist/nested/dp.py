"""Nested distance by backward recursion over node pairs.

At the last stage the sub-tree distance of two leaves is their scenario
distance. At an earlier stage, d^p(k, l) is the optimal value of a small
transport problem between the successors of k and of l, with the
conditional probabilities P(r|k), Q(s|l) as marginals and the stage-(t+1)
sub-tree distances as costs. Each local problem is solved at unit mass.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..metric import StagewiseMetric
from ..transport import solve_local
from ..tree import DEFAULT_TOL, ProbabilityTree, require_valid
from .table import NestedResult, NodePairTable, NodeStageMismatchError, path_distance_tables

__all__ = ["nested_dp", "subtree_distance", "local_successor_data"]


def local_successor_data(tree: ProbabilityTree, t: int) -> list[tuple[np.ndarray, np.ndarray, bool]]:
    """For each stage-t node: successor positions within stage t+1, P(r|k), mass-free flag.

    Conditionals of a zero-probability node are undefined; they are replaced
    by a uniform distribution over its successors and the node is flagged.
    """
    start = tree.nodes_at(t + 1)[0]
    out = []
    for k in tree.nodes_at(t):
        kids = np.array(tree.children[k], dtype=np.int64)
        pk = tree.prob[k]
        if pk > 0:
            cond = tree.prob[kids] / pk
            out.append((kids - start, cond, False))
        else:
            out.append((kids - start, np.full(len(kids), 1.0 / len(kids)), True))
    return out


def _solve_rows(task):
    """Solve the local problems of a block of stage-t rows; module-level for pickling."""
    next_values, rows, cols, store_plans = task
    values = np.empty((len(rows), len(cols)))
    plans = {} if store_plans else None
    for a, (rk, pk, _) in enumerate(rows):
        sub_rows = next_values[rk]
        for b, (sl, ql, _) in enumerate(cols):
            cost = sub_rows[:, sl]
            if len(rk) == 1:
                # a single successor forces the plan: the coupling is Q(.|l)
                flows = ql.reshape(1, -1)
                values[a, b] = float(cost[0] @ ql)
            elif len(sl) == 1:
                flows = pk.reshape(-1, 1)
                values[a, b] = float(cost[:, 0] @ pk)
            else:
                values[a, b], flows = solve_local(cost, pk, ql)
            if store_plans:
                plans[(a, b)] = flows
    return values, plans


def nested_dp(
    A: ProbabilityTree,
    B: ProbabilityTree,
    metric: StagewiseMetric,
    *,
    store_plans: bool = False,
    workers: int = 1,
    tol: float = DEFAULT_TOL,
) -> NestedResult:
    """Nested distance (d^p scale) with the full table of sub-tree distances."""
    require_valid(A, tol)
    require_valid(B, tol)
    tables = path_distance_tables(A, B, metric)
    T = A.n_stages
    values: list[np.ndarray] = [None] * T  # type: ignore[list-item]
    values[T - 1] = tables[T - 1]
    plans: dict[tuple[int, int], np.ndarray] | None = {} if store_plans else None
    mass_free: set[tuple[int, int]] = set()

    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(T - 1, 0, -1):
            rows = local_successor_data(A, t)
            cols = local_successor_data(B, t)
            a0, b0 = A.nodes_at(t)[0], B.nodes_at(t)[0]
            nxt = values[t]
            if pool is None or len(rows) < 2:
                blocks = [(0, _solve_rows((nxt, rows, cols, store_plans)))]
            else:
                step = max(1, -(-len(rows) // (4 * workers)))
                starts = list(range(0, len(rows), step))
                tasks = [(nxt, rows[s:s + step], cols, store_plans) for s in starts]
                blocks = list(zip(starts, pool.map(_solve_rows, tasks)))
            stage_values = np.empty((len(rows), len(cols)))
            for s, (block, block_plans) in blocks:
                stage_values[s:s + block.shape[0]] = block
                if store_plans:
                    for (a, b), flows in block_plans.items():
                        plans[(a0 + s + a, b0 + b)] = flows
            values[t - 1] = stage_values
            for a, (_, _, free_a) in enumerate(rows):
                for b, (_, _, free_b) in enumerate(cols):
                    if free_a or free_b:
                        mass_free.add((a0 + a, b0 + b))
    finally:
        if pool is not None:
            pool.shutdown()

    table = NodePairTable(A, B, values, plans, mass_free)
    return NestedResult(float(values[0][0, 0]), "dp", metric.p, table=table)


def subtree_distance(
    A: ProbabilityTree,
    B: ProbabilityTree,
    metric: StagewiseMetric,
    k: int,
    l: int,
    result: NestedResult | None = None,
) -> float:
    """d^p(k, l): nested distance between the path-extended subtrees at k and l."""
    if A.stage[k] != B.stage[l]:
        raise NodeStageMismatchError(
            f"node {A.ids[k]} is at stage {A.stage[k]}, node {B.ids[l]} at stage {B.stage[l]}"
        )
    if result is None or result.table is None:
        result = nested_dp(A, B, metric)
    return result.table.value(k, l)
