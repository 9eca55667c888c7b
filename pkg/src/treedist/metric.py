"""Ground distances and the weighted stagewise scenario distance.

Everything here works on the p-th power of distances: the transport and
nested programs are linear in d^p, and the p-th root is only taken when a
final value is reported.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .tree import ScenarioPath

__all__ = ["GROUNDS", "StagewiseMetric", "pairwise_cost_p", "ground_distance_p", "scenario_distance_p"]

GROUNDS = ("euclidean", "abs")


def pairwise_cost_p(ground: str, p: float, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Matrix of d(x_i, y_j)**p for point sets X (m, dim) and Y (n, dim)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    diff = X[:, None, :] - Y[None, :, :]
    if ground == "euclidean":
        sq = np.sum(diff * diff, axis=2)
        # p = 2 is kept free of sqrt so that squared distances stay exact
        return sq if p == 2 else sq ** (p / 2.0)
    if ground == "abs":
        l1 = np.sum(np.abs(diff), axis=2)
        return l1 if p == 1 else l1**p
    raise ValueError(f"unknown ground metric {ground!r}")


@dataclass(frozen=True)
class StagewiseMetric:
    """Order ``p``, positive stage weights and a ground metric per stage.

    ``weights=None`` means unit weight on every stage, whatever the number of
    stages. ``ground`` is either one name used for every stage or a sequence
    with one name per stage.
    """

    p: float = 2.0
    weights: tuple[float, ...] | None = None
    ground: str | tuple[str, ...] = "euclidean"

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError(f"order p must be >= 1, got {self.p}")
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if not w or any(not x > 0 for x in w):
                raise ValueError("stage weights must be strictly positive")
            object.__setattr__(self, "weights", w)
        grounds = (self.ground,) if isinstance(self.ground, str) else tuple(self.ground)
        for g in grounds:
            if g not in GROUNDS:
                raise ValueError(f"unknown ground metric {g!r}; expected one of {GROUNDS}")
        if not isinstance(self.ground, str):
            object.__setattr__(self, "ground", grounds)

    def weights_for(self, T: int) -> np.ndarray:
        if self.weights is None:
            return np.ones(T)
        if len(self.weights) != T:
            raise ValueError(f"metric has {len(self.weights)} weights, trees have {T} stages")
        return np.array(self.weights)

    def ground_for(self, t: int) -> str:
        """Ground metric name for 1-based stage ``t``."""
        if isinstance(self.ground, str):
            return self.ground
        return self.ground[t - 1]

    def check_stages(self, T: int) -> None:
        self.weights_for(T)
        if not isinstance(self.ground, str) and len(self.ground) != T:
            raise ValueError(f"metric has {len(self.ground)} ground metrics, trees have {T} stages")

    def is_quadratic(self, t: int) -> bool:
        return self.p == 2 and self.ground_for(t) == "euclidean"

    def cost_matrix(self, t: int, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return pairwise_cost_p(self.ground_for(t), self.p, X, Y)

    @classmethod
    def from_dict(cls, data: Mapping) -> "StagewiseMetric":
        ground = data.get("ground", "euclidean")
        weights = data.get("weights")
        return cls(
            p=float(data.get("p", 2.0)),
            weights=None if weights is None else tuple(weights),
            ground=ground if isinstance(ground, str) else tuple(ground),
        )

    def to_dict(self) -> dict:
        return {
            "p": float(self.p),
            "weights": None if self.weights is None else list(self.weights),
            "ground": self.ground if isinstance(self.ground, str) else list(self.ground),
        }


def ground_distance_p(metric: StagewiseMetric, t: int, x: Sequence[float], y: Sequence[float]) -> float:
    """d_t(x, y)**p for a single pair of outcomes."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(metric.cost_matrix(t, x[None, :], y[None, :])[0, 0])


def scenario_distance_p(metric: StagewiseMetric, a: ScenarioPath | np.ndarray, b: ScenarioPath | np.ndarray) -> float:
    """Sum over stages of w_t * d_t(a_t, b_t)**p."""
    xa = a.outcomes if isinstance(a, ScenarioPath) else np.asarray(a, dtype=float)
    xb = b.outcomes if isinstance(b, ScenarioPath) else np.asarray(b, dtype=float)
    if xa.ndim == 1:
        xa = xa.reshape(-1, 1)
    if xb.ndim == 1:
        xb = xb.reshape(-1, 1)
    if xa.shape[0] != xb.shape[0]:
        raise ValueError(f"path lengths differ: {xa.shape[0]} vs {xb.shape[0]}")
    T = xa.shape[0]
    w = metric.weights_for(T)
    total = 0.0
    for t in range(1, T + 1):
        total += w[t - 1] * ground_distance_p(metric, t, xa[t - 1], xb[t - 1])
    return float(total)
