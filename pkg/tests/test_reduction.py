import itertools

import numpy as np
import pytest

from treedist import StageMarginal, StagewiseMetric, SwiSpec, build_swi_tree, nested_dp, reduce_swi, weighted_kmeans
from treedist.generate import random_swi_spec
from treedist.reduction import ReductionError, reduce_stage


def best_two_partition(x, w):
    """Exhaustive minimum of the weighted within-group squared deviation over 2-partitions."""
    n = len(x)
    best = np.inf
    for mask in range(1, 2 ** (n - 1)):
        groups = [[i for i in range(n) if (mask >> i) & 1 == g] for g in (0, 1)]
        cost = 0.0
        for g in groups:
            c = np.dot(w[g], x[g]) / w[g].sum()
            cost += float(np.dot(w[g], (x[g] - c) ** 2))
        best = min(best, cost)
    return best


def uniform_four():
    return StageMarginal(np.array([[0.0], [1.0], [2.0], [3.0]]), np.full(4, 0.25))


def test_kmeans_uniform_four_points():
    km = weighted_kmeans(uniform_four().points, uniform_four().probs, 2, np.random.default_rng(0))
    assert sorted(km.centers.ravel()) == pytest.approx([0.5, 2.5])
    assert km.weights.tolist() == [0.5, 0.5]
    oracle = best_two_partition(np.arange(4.0), np.full(4, 0.25))
    assert oracle == 0.25
    assert km.objective == pytest.approx(oracle, abs=1e-15)


def test_reduction_value_equals_transport_distance():
    reduced, value, method, _ = reduce_stage(uniform_four(), 2, StagewiseMetric(), 2, np.random.default_rng(1))
    assert method == "kmeans"
    assert value == pytest.approx(0.25, abs=1e-15)
    assert reduced.probs.sum() == pytest.approx(1.0)


def test_kmeans_against_exhaustive_partitions(rng):
    for _ in range(20):
        n = int(rng.integers(2, 8))
        x = rng.uniform(size=n)
        w = rng.dirichlet(np.ones(n))
        km = weighted_kmeans(x.reshape(-1, 1), w, 2, rng)
        assert km.objective >= best_two_partition(x, w) - 1e-12


def test_kmeans_history_monotone(rng):
    for _ in range(20):
        n = int(rng.integers(5, 40))
        km = weighted_kmeans(rng.normal(size=(n, 2)), rng.dirichlet(np.ones(n)), int(rng.integers(1, n)), rng)
        assert all(b <= a + 1e-12 for a, b in zip(km.history, km.history[1:]))
        assert km.converged


def test_kmeans_fixed_point_when_k_equals_n():
    pts = np.array([[0.0], [4.0], [9.0]])
    km = weighted_kmeans(pts, np.array([0.2, 0.3, 0.5]), 3, np.random.default_rng(0))
    assert km.objective == 0.0
    assert sorted(km.centers.ravel()) == [0.0, 4.0, 9.0]


def test_identity_targets_give_zero(rng):
    spec = random_swi_spec(rng, 4)
    result = reduce_swi(spec, spec.sizes)
    assert result.total_p == 0.0
    assert result.methods == ["identity"] * 4
    assert result.spec.same_as(spec)


def test_total_is_weighted_stage_sum_and_matches_nested(rng):
    for _ in range(5):
        spec = random_swi_spec(rng, 4, max_support=6, dimension=2)
        targets = [1] + [max(1, s // 2) for s in spec.sizes[1:]]
        metric = StagewiseMetric(p=2, weights=(1.0, 0.5, 2.0, 1.5))
        result = reduce_swi(spec, targets, metric, seed=7)
        assert result.spec.sizes == targets
        assert result.total_p == pytest.approx(sum(w * v for w, v in zip(result.weights, result.stage_values)), abs=1e-15)
        dp = nested_dp(build_swi_tree(spec), build_swi_tree(result.spec), metric).value_p
        assert abs(dp - result.total_p) <= 1e-8 * max(1.0, dp)


def test_swap_search_for_non_quadratic_cost():
    spec = SwiSpec((StageMarginal(np.zeros((1, 1)), np.ones(1)), uniform_four()))
    result = reduce_swi(spec, [1, 2], StagewiseMetric(p=1, ground="abs"))
    assert result.methods == ["identity", "swap"]
    # best 2-subset for |x - y|: keep one point of each pair, cost 0.5 * 1 = 0.5
    assert result.stage_values[1] == pytest.approx(0.5)
    subsets = itertools.combinations(range(4), 2)
    oracle = min(sum(0.25 * min(abs(i - j) for j in S) for i in range(4)) for S in subsets)
    assert result.stage_values[1] == pytest.approx(oracle)


def test_reduction_is_deterministic(rng):
    spec = random_swi_spec(rng, 3, dimension=2, sizes=[1, 12, 9])
    a = reduce_swi(spec, [1, 3, 4], seed=11)
    b = reduce_swi(spec, [1, 3, 4], seed=11)
    assert a.stage_values == b.stage_values
    for x, y in zip(a.spec.stages, b.spec.stages):
        assert np.array_equal(x.points, y.points) and np.array_equal(x.probs, y.probs)


@pytest.mark.parametrize("targets", [[2, 1, 1], [1, 0, 1], [1, 99, 1], [1, 1]])
def test_invalid_targets(targets):
    spec = random_swi_spec(np.random.default_rng(0), 3, sizes=[1, 3, 3])
    with pytest.raises(ReductionError):
        reduce_swi(spec, targets)
