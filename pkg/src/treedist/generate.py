"""Seeded random trees, SWI descriptions and metrics for tests and benchmarks.

Probabilities are uniform draws normalised to sum to one; outcomes are
uniform in the unit cube.
"""

from __future__ import annotations

import numpy as np

from .metric import StagewiseMetric
from .swi import SwiSpec
from .tree import ProbabilityTree, StageMarginal

__all__ = ["random_probs", "random_tree", "random_swi_spec", "random_metric", "perturb_node"]


def random_probs(rng: np.random.Generator, n: int) -> np.ndarray:
    w = rng.uniform(0.05, 1.0, size=n)
    return w / w.sum()


def random_tree(
    rng: np.random.Generator,
    n_stages: int,
    max_branching: int = 3,
    dimension: int = 1,
    min_branching: int = 1,
) -> ProbabilityTree:
    """Tree with a random number of children (in [min, max]) at every node."""
    parents: list[int | None] = [None]
    outcomes = [rng.uniform(size=dimension)]
    probs = [1.0]
    frontier = [0]
    for _ in range(1, n_stages):
        nxt = []
        for k in frontier:
            n = int(rng.integers(min_branching, max_branching + 1))
            for c in random_probs(rng, n):
                parents.append(k)
                outcomes.append(rng.uniform(size=dimension))
                probs.append(probs[k] * c)
                nxt.append(len(parents) - 1)
        frontier = nxt
    return ProbabilityTree.from_parents(parents, np.array(outcomes), probs)


def random_swi_spec(
    rng: np.random.Generator,
    n_stages: int,
    max_support: int = 4,
    dimension: int = 1,
    sizes: list[int] | None = None,
) -> SwiSpec:
    """Deterministic first stage, then independent random marginals."""
    if sizes is None:
        sizes = [1] + [int(rng.integers(1, max_support + 1)) for _ in range(n_stages - 1)]
    stages = []
    for size in sizes:
        stages.append(StageMarginal(rng.uniform(size=(size, dimension)), random_probs(rng, size)))
    return SwiSpec(tuple(stages))


def random_metric(rng: np.random.Generator, n_stages: int, orders=(1.0, 2.0)) -> StagewiseMetric:
    p = float(orders[int(rng.integers(len(orders)))])
    weights = tuple(float(w) for w in rng.uniform(0.5, 2.0, size=n_stages))
    return StagewiseMetric(p=p, weights=weights)


def perturb_node(tree: ProbabilityTree, k: int, delta: float) -> ProbabilityTree:
    """Move conditional mass ``delta`` between the first two children of ``k``,
    rescaling their subtrees so the tree stays valid."""
    kids = tree.children[k]
    if len(kids) < 2:
        raise ValueError("node needs at least two children")
    pk = tree.prob[k]
    factors = np.ones(tree.n_nodes)
    for child, sign in ((kids[0], 1.0), (kids[1], -1.0)):
        cond = tree.prob[child] / pk
        new = cond + sign * delta
        if not 0 < new < 1:
            raise ValueError("perturbation leaves the probability simplex")
        factors[child] = new / cond
    probs = tree.prob.copy()
    for node in range(tree.n_nodes):
        f, j = 1.0, node
        while j >= 0:
            f *= factors[j]
            j = int(tree.parent[j])
        probs[node] *= f
    parents = [None if p < 0 else int(p) for p in tree.parent]
    return ProbabilityTree.from_parents(parents, tree.outcomes.copy(), probs)
