"""Scenario reduction that keeps stagewise independence.

For SWI trees the nested distance splits into per-stage Wasserstein terms, so
the best SWI approximation is found stage by stage. With the quadratic
Euclidean cost each stage is a weighted K-means problem (Lloyd iterations
reach a local optimum). Other costs use a swap local search over subsets
of the original support, where each point's mass goes to its nearest kept
point.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .metric import StagewiseMetric
from .swi import SwiSpec, _weighted_sum
from .transport import wasserstein_p
from .tree import StageMarginal

__all__ = ["ReductionError", "KMeansResult", "weighted_kmeans", "reduce_stage", "ReductionResult", "reduce_swi"]

MAX_LLOYD_ITER = 200


class ReductionError(ValueError):
    pass


@dataclass(eq=False)
class KMeansResult:
    centers: np.ndarray
    weights: np.ndarray
    labels: np.ndarray
    objective: float
    history: list[float]
    converged: bool


def _sq_dist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - C[None, :, :]
    return np.sum(diff * diff, axis=2)


def _farthest_point_seeds(X: np.ndarray, k: int, first: int) -> np.ndarray:
    chosen = [first]
    nearest = _sq_dist(X, X[[first]])[:, 0]
    while len(chosen) < k:
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, _sq_dist(X, X[[nxt]])[:, 0])
    return X[chosen].copy()


def _lloyd(X: np.ndarray, w: np.ndarray, centers: np.ndarray, max_iter: int) -> KMeansResult:
    history: list[float] = []
    labels = None
    converged = False
    for _ in range(max_iter):
        d2 = _sq_dist(X, centers)
        new_labels = np.argmin(d2, axis=1)
        history.append(float(np.dot(w, d2[np.arange(len(X)), new_labels])))
        if labels is not None and np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
        for c in range(len(centers)):
            members = labels == c
            mass = w[members].sum()
            if mass > 0:
                centers[c] = w[members] @ X[members] / mass
            else:
                # empty cluster: restart it on the point that currently costs most
                worst = int(np.argmax(d2[np.arange(len(X)), labels]))
                centers[c] = X[worst]
                labels = labels.copy()
                labels[worst] = c
    d2 = _sq_dist(X, centers)
    weights = np.bincount(labels, weights=w, minlength=len(centers))
    objective = float(np.dot(w, d2[np.arange(len(X)), labels]))
    return KMeansResult(centers, weights, labels, objective, history, converged)


def weighted_kmeans(
    points: np.ndarray,
    probs: np.ndarray,
    k: int,
    rng: np.random.Generator,
    n_init: int | None = None,
    max_iter: int = MAX_LLOYD_ITER,
) -> KMeansResult:
    """Lloyd's algorithm on weighted points with farthest-point seeding.

    Each restart seeds from a different random first point; the run with
    the lowest objective wins (earliest on ties).
    """
    X = np.asarray(points, dtype=float)
    w = np.asarray(probs, dtype=float)
    n = len(X)
    if not 1 <= k <= n:
        raise ReductionError(f"cannot pick {k} centers from {n} points")
    n_init = min(n, 10) if n_init is None else min(n, n_init)
    best = None
    for first in rng.permutation(n)[:n_init]:
        run = _lloyd(X, w, _farthest_point_seeds(X, k, int(first)), max_iter)
        if best is None or run.objective < best.objective:
            best = run
    return best


def _swap_search(C: np.ndarray, w: np.ndarray, k: int) -> list[int]:
    """Subset of k support indices minimising sum_i w_i min_{j in S} C[i, j]."""
    n = C.shape[0]

    def cost(S):
        return float(w @ C[:, S].min(axis=1))

    S = [int(np.argmin(w @ C))]
    while len(S) < k:
        rest = [j for j in range(n) if j not in S]
        S.append(min(rest, key=lambda j: (cost(S + [j]), j)))
    current = cost(S)
    improved = True
    while improved:
        improved = False
        for pos in range(k):
            for j in range(n):
                if j in S:
                    continue
                trial = S[:pos] + [j] + S[pos + 1:]
                value = cost(trial)
                if value < current - 1e-15 * max(1.0, current):
                    S, current, improved = trial, value, True
    return sorted(S)


def reduce_stage(
    marginal: StageMarginal,
    target: int,
    metric: StagewiseMetric,
    t: int,
    rng: np.random.Generator,
) -> tuple[StageMarginal, float, str, KMeansResult | None]:
    """Reduced marginal with ``target`` atoms, its Wasserstein^p distance to the
    original, the method used and the K-means run if there was one."""
    n = len(marginal)
    if not 1 <= target <= n:
        raise ReductionError(f"stage {t}: target size {target} outside 1..{n}")
    if target == n:
        reduced, method, km = marginal, "identity", None
    elif metric.is_quadratic(t):
        km = weighted_kmeans(marginal.points, marginal.probs, target, rng)
        reduced, method = StageMarginal(km.centers, km.weights), "kmeans"
    else:
        C = metric.cost_matrix(t, marginal.points, marginal.points)
        S = _swap_search(C, marginal.probs, target)
        nearest = np.argmin(C[:, S], axis=1)
        weights = np.bincount(nearest, weights=marginal.probs, minlength=len(S))
        reduced, method, km = StageMarginal(marginal.points[S], weights), "swap", None
    return reduced, wasserstein_p(marginal, reduced, metric, t), method, km


@dataclass(eq=False)
class ReductionResult:
    spec: SwiSpec
    stage_values: list[float]
    weights: list[float]
    total_p: float
    methods: list[str] = field(default_factory=list)
    kmeans: list[KMeansResult | None] = field(default_factory=list)


def _reduce_task(args):
    marginal, target, metric, t, seed = args
    rng = np.random.default_rng([seed, t])
    return reduce_stage(marginal, target, metric, t, rng)


def reduce_swi(
    spec: SwiSpec,
    targets: Sequence[int],
    metric: StagewiseMetric | None = None,
    seed: int = 0,
    workers: int = 1,
) -> ReductionResult:
    """Reduce every stage marginal independently to the requested support size.

    Each stage draws from its own generator seeded with ``(seed, stage)``, so
    the result does not depend on ``workers``.
    """
    metric = metric or StagewiseMetric()
    spec.check()
    targets = [int(x) for x in targets]
    if len(targets) != spec.n_stages:
        raise ReductionError(f"{len(targets)} target sizes for {spec.n_stages} stages")
    if targets[0] != 1:
        raise ReductionError("the first stage is the root and must keep exactly one point")
    for t, (m, target) in enumerate(zip(spec.stages, targets), start=1):
        if not 1 <= target <= len(m):
            raise ReductionError(f"stage {t}: target size {target} outside 1..{len(m)}")
    weights = metric.weights_for(spec.n_stages)
    tasks = [(m, target, metric, t, seed) for t, (m, target) in enumerate(zip(spec.stages, targets), start=1)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_reduce_task, tasks))
    else:
        parts = [_reduce_task(task) for task in tasks]
    values = [v for _, v, _, _ in parts]
    return ReductionResult(
        spec=SwiSpec(tuple(r for r, _, _, _ in parts)),
        stage_values=values,
        weights=[float(x) for x in weights],
        total_p=_weighted_sum(weights, values),
        methods=[m for _, _, m, _ in parts],
        kmeans=[km for _, _, _, km in parts],
    )
