from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..metric import StagewiseMetric
from ..tree import ProbabilityTree

__all__ = [
    "StageCountMismatchError",
    "NodeStageMismatchError",
    "NodePairTable",
    "NestedResult",
    "path_distance_tables",
    "check_pair",
]


class StageCountMismatchError(ValueError):
    pass


class NodeStageMismatchError(ValueError):
    pass


def check_pair(A: ProbabilityTree, B: ProbabilityTree, metric: StagewiseMetric) -> int:
    if A.n_stages != B.n_stages:
        raise StageCountMismatchError(f"trees have {A.n_stages} and {B.n_stages} stages")
    if A.dimension != B.dimension:
        raise ValueError(f"outcome dimensions differ: {A.dimension} vs {B.dimension}")
    metric.check_stages(A.n_stages)
    return A.n_stages


def path_distance_tables(A: ProbabilityTree, B: ProbabilityTree, metric: StagewiseMetric) -> list[np.ndarray]:
    """For every stage t, the matrix of sum_{tau<=t} w_tau d_tau^p over stage-t node pairs.

    Entry ``[t-1][a, b]`` refers to the a-th stage-t node of A and the b-th
    stage-t node of B. At the last stage this is the scenario distance
    between leaves; it is accumulated stage by stage in the same order as
    :func:`treedist.metric.scenario_distance_p` so both agree bitwise.
    """
    T = check_pair(A, B, metric)
    w = metric.weights_for(T)
    tables: list[np.ndarray] = []
    for t in range(1, T + 1):
        na, nb = A.nodes_at(t), B.nodes_at(t)
        stage_cost = w[t - 1] * metric.cost_matrix(t, A.outcomes[na], B.outcomes[nb])
        if t == 1:
            tables.append(0.0 + stage_cost)
            continue
        pa = A.parent[na] - A.nodes_at(t - 1)[0]
        pb = B.parent[nb] - B.nodes_at(t - 1)[0]
        tables.append(tables[-1][np.ix_(pa, pb)] + stage_cost)
    return tables


@dataclass(eq=False)
class NodePairTable:
    """Sub-tree distances d^p(k, l) for all same-stage node pairs.

    ``values[t-1]`` is indexed by the positions of k and l within their
    stage blocks. ``plans`` optionally maps (k, l) node indices to the
    optimal local plan over the successor pairs.
    """

    A: ProbabilityTree
    B: ProbabilityTree
    values: list[np.ndarray]
    plans: dict[tuple[int, int], np.ndarray] | None = None
    mass_free: set[tuple[int, int]] = field(default_factory=set)

    def value(self, k: int, l: int) -> float:
        t = int(self.A.stage[k])
        if t != self.B.stage[l]:
            raise NodeStageMismatchError(
                f"node {self.A.ids[k]} is at stage {t}, node {self.B.ids[l]} at stage {self.B.stage[l]}"
            )
        return float(self.values[t - 1][k - self.A.nodes_at(t)[0], l - self.B.nodes_at(t)[0]])

    def to_dict(self) -> dict:
        return {
            "stages": [
                {
                    "stage": t,
                    "a_nodes": [self.A.ids[k] for k in self.A.nodes_at(t)],
                    "b_nodes": [self.B.ids[l] for l in self.B.nodes_at(t)],
                    "values": v.tolist(),
                }
                for t, v in enumerate(self.values, start=1)
            ]
        }


@dataclass(eq=False)
class NestedResult:
    value_p: float
    method: str
    p: float
    table: NodePairTable | None = None
    stage_terms: list[float] | None = None
    plan: np.ndarray | None = None

    @property
    def value_root(self) -> float:
        return max(self.value_p, 0.0) ** (1.0 / self.p)

    def to_dict(self, include_table: bool = False) -> dict:
        out = {"value_p": self.value_p, "value_root": self.value_root, "method": self.method}
        if self.stage_terms is not None:
            out["stage_terms"] = list(self.stage_terms)
        if include_table and self.table is not None:
            out["table"] = self.table.to_dict()["stages"]
        return out
