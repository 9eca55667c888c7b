import numpy as np
import pytest
from scipy.optimize import linprog

from treedist import (
    ProbabilityTree,
    StagewiseMetric,
    check_constraint_equivalence,
    check_homogeneity,
    nested_dp,
    nested_lp,
    scenario_distance_p,
    scenarios,
    stage_marginal,
    subtree_distance,
    wasserstein_p,
)
from treedist.generate import random_metric, random_tree
from treedist.nested import LPSizeError, NodeStageMismatchError, StageCountMismatchError
from treedist.tree import InvalidTreeError, path_extended_subtree

from conftest import chain, fan, three_stage_tree


def dense_nested_oracle(A, B, metric):
    """Leaf-pair LP written out directly: at every node pair (k, l) and child
    k' of k, the mass below (k', l) is P(k'|k) times the mass below (k, l),
    and likewise for children of l."""
    la, lb = list(A.leaves), list(B.leaves)
    T = A.n_stages
    below_a = {k: np.array([A.ancestor_at(int(i), A.stage[k]) == k for i in la], float) for k in range(A.n_nodes)}
    below_b = {l: np.array([B.ancestor_at(int(j), B.stage[l]) == l for j in lb], float) for l in range(B.n_nodes)}
    rows, rhs = [], []
    for t in range(1, T):
        for k in A.nodes_at(t):
            for l in B.nodes_at(t):
                base = np.outer(below_a[k], below_b[l])
                for kc in A.children[k]:
                    rows.append((np.outer(below_a[kc], below_b[l]) - A.prob[kc] / A.prob[k] * base).ravel())
                    rhs.append(0.0)
                for lc in B.children[l]:
                    rows.append((np.outer(below_a[k], below_b[lc]) - B.prob[lc] / B.prob[l] * base).ravel())
                    rhs.append(0.0)
    rows.append(np.ones(len(la) * len(lb)))
    rhs.append(1.0)
    paths_a = {s.leaf: s for s in scenarios(A)}
    paths_b = {s.leaf: s for s in scenarios(B)}
    cost = np.array([[scenario_distance_p(metric, paths_a[i], paths_b[j]) for j in lb] for i in la]).ravel()
    res = linprog(cost, A_eq=np.array(rows), b_eq=np.array(rhs), method="highs")
    assert res.status == 0
    return res.fun


def binary_tree(outcomes, cond):
    """Three-stage binary tree; ``cond`` holds the conditional probabilities
    of the first child at the root and at the two stage-2 nodes."""
    r, u, v = cond
    probs = [1.0, r, 1 - r, r * u, r * (1 - u), (1 - r) * v, (1 - r) * (1 - v)]
    return ProbabilityTree.from_parents([None, 0, 0, 1, 1, 2, 2], np.array(outcomes, float), probs)


def test_identical_trees_have_zero_distance(tree3):
    assert nested_dp(tree3, tree3, StagewiseMetric()).value_p == 0.0


def test_chains_reduce_to_scenario_distance():
    metric = StagewiseMetric(p=2, weights=(2.0, 1.0, 1.0))
    result = nested_dp(chain([0.0, 1.0, 1.0]), chain([0.0, 0.0, 3.0]), metric)
    assert result.value_p == 5.0
    assert result.value_root == pytest.approx(5.0**0.5)


def test_two_stage_matches_wasserstein():
    A = fan([0.0], [[0.0], [1.0]], [0.5, 0.5])
    B = fan([0.0], [[0.0], [2.0]], [0.5, 0.5])
    metric = StagewiseMetric(p=1, ground="abs")
    expected = wasserstein_p(stage_marginal(A, 2), stage_marginal(B, 2), metric, 2)
    assert expected == 0.5
    assert nested_dp(A, B, metric).value_p == pytest.approx(expected, abs=1e-12)
    assert nested_lp(A, B, metric).value_p == pytest.approx(expected, abs=1e-10)


def test_binary_three_stage_against_dense_oracle():
    A = binary_tree([[0], [1], [-1], [2], [0], [0], [-2]], (0.5, 0.5, 0.5))
    B = binary_tree([[0], [1], [-1], [0], [2], [-2], [0]], (0.3, 0.7, 0.6))
    metric = StagewiseMetric(p=2)
    oracle = dense_nested_oracle(A, B, metric)
    assert nested_dp(A, B, metric).value_p == pytest.approx(oracle, abs=1e-9)
    assert nested_lp(A, B, metric).value_p == pytest.approx(oracle, abs=1e-9)


def test_nested_exceeds_plain_wasserstein_of_scenarios():
    # the filtration constraint can only increase the cost
    A = binary_tree([[0], [0], [0], [1], [-1], [1], [-1]], (0.5, 0.9, 0.1))
    B = binary_tree([[0], [0], [0], [1], [-1], [1], [-1]], (0.5, 0.5, 0.5))
    metric = StagewiseMetric(p=1)
    from treedist.transport import transport_value

    sa, sb = scenarios(A), scenarios(B)
    C = np.array([[scenario_distance_p(metric, x, y) for y in sb] for x in sa])
    plain = transport_value(C, [s.probability for s in sa], [s.probability for s in sb])
    nested = nested_dp(A, B, metric).value_p
    assert plain == pytest.approx(0.0, abs=1e-12)
    assert nested == pytest.approx(0.8, abs=1e-12)


def test_random_trees_against_dense_oracle(rng):
    for _ in range(15):
        T = int(rng.integers(2, 5))
        dim = int(rng.integers(1, 3))
        A, B = random_tree(rng, T, 3, dim), random_tree(rng, T, 3, dim)
        metric = random_metric(rng, T)
        oracle = dense_nested_oracle(A, B, metric)
        dp = nested_dp(A, B, metric).value_p
        assert abs(dp - oracle) <= 1e-8 * max(1.0, oracle)
        assert abs(nested_lp(A, B, metric).value_p - dp) <= 1e-8 * max(1.0, dp)


def test_symmetry(rng):
    for _ in range(10):
        A, B = random_tree(rng, 3, 3), random_tree(rng, 3, 3)
        metric = random_metric(rng, 3)
        ab, ba = nested_dp(A, B, metric).value_p, nested_dp(B, A, metric).value_p
        assert abs(ab - ba) <= 1e-12 * max(1.0, ab)


def test_lp_plan_is_a_coupling(rng):
    A, B = random_tree(rng, 3, 3), random_tree(rng, 3, 3)
    result = nested_lp(A, B, StagewiseMetric())
    assert result.plan.min() >= -1e-12
    assert np.allclose(result.plan.sum(axis=1), A.prob[A.leaves], atol=1e-9)
    assert np.allclose(result.plan.sum(axis=0), B.prob[B.leaves], atol=1e-9)


def test_stored_local_plans_have_conditional_marginals(tree3):
    B = random_tree(np.random.default_rng(3), 3, 3)
    result = nested_dp(tree3, B, StagewiseMetric(), store_plans=True)
    for (k, l), flows in result.table.plans.items():
        assert np.allclose(flows.sum(axis=1), tree3.prob[list(tree3.children[k])] / tree3.prob[k])
        assert np.allclose(flows.sum(axis=0), B.prob[list(B.children[l])] / B.prob[l])


def test_subtree_distance_equals_path_extended_lp(rng):
    for _ in range(5):
        A, B = random_tree(rng, 4, 3, min_branching=2), random_tree(rng, 4, 3, min_branching=2)
        metric = random_metric(rng, 4)
        result = nested_dp(A, B, metric)
        for t in (1, 2, 3, 4):
            k = int(rng.choice(A.nodes_at(t)))
            l = int(rng.choice(B.nodes_at(t)))
            sub = nested_lp(path_extended_subtree(A, k), path_extended_subtree(B, l), metric).value_p
            value = subtree_distance(A, B, metric, k, l, result)
            assert abs(value - sub) <= 1e-8 * max(1.0, sub)


def test_leaf_pairs_hold_scenario_distances(tree3):
    B = three_stage_tree()
    metric = StagewiseMetric(p=1)
    result = nested_dp(tree3, B, metric)
    for i in tree3.leaves:
        for j in B.leaves:
            expected = scenario_distance_p(metric, tree3.outcomes[tree3.path(i)], B.outcomes[B.path(j)])
            assert result.table.value(int(i), int(j)) == expected


def test_zero_probability_branch_is_flagged():
    A = ProbabilityTree.from_parents([None, 0, 0, 1, 2], np.array([[0.0], [1.0], [2.0], [1.0], [2.0]]),
                                     [1.0, 1.0, 0.0, 1.0, 0.0])
    B = chain([0.0, 1.0, 1.0])
    result = nested_dp(A, B, StagewiseMetric())
    assert result.value_p == 0.0
    assert (2, 1) in result.table.mass_free
    assert nested_lp(A, B, StagewiseMetric()).value_p == pytest.approx(0.0, abs=1e-12)


def test_mismatches_are_rejected(tree3):
    with pytest.raises(StageCountMismatchError):
        nested_dp(tree3, chain([0.0, 1.0]), StagewiseMetric())
    with pytest.raises(NodeStageMismatchError):
        subtree_distance(tree3, tree3, StagewiseMetric(), 1, 4)
    broken = ProbabilityTree.from_parents([None, 0, 0], np.zeros((3, 1)), [1.0, 0.5, 0.6])
    with pytest.raises(InvalidTreeError):
        nested_dp(broken, broken, StagewiseMetric())


def test_lp_size_cap(tree3, monkeypatch):
    with pytest.raises(LPSizeError):
        nested_lp(tree3, tree3, StagewiseMetric(), cap=10)
    monkeypatch.setenv("TREEDIST_LP_CAP", "3")
    with pytest.raises(LPSizeError):
        nested_lp(tree3, tree3, StagewiseMetric())


@pytest.mark.parametrize("T", [3, 4])
def test_constraint_sets_are_equivalent(T):
    rng = np.random.default_rng(T)
    for _ in range(3):
        A = random_tree(rng, T, 2, min_branching=2)
        B = random_tree(rng, T, 2, min_branching=2)
        report = check_constraint_equivalence(A, B, random_metric(rng, T))
        assert report.passed, report.to_dict()


@pytest.mark.parametrize("alpha", [0.0, 0.37, 1.0, 2.5])
def test_homogeneity_at_interior_pairs(alpha):
    rng = np.random.default_rng(99)
    A, B = random_tree(rng, 4, 3, min_branching=2), random_tree(rng, 4, 3, min_branching=2)
    metric = random_metric(rng, 4)
    for t in (1, 2, 3):
        k, l = int(A.nodes_at(t)[-1]), int(B.nodes_at(t)[0])
        report = check_homogeneity(A, B, metric, k, l, alpha)
        assert report.passed, report.to_dict()
        if alpha == 1.0:
            dp = nested_dp(path_extended_subtree(A, k), path_extended_subtree(B, l), metric).value_p
            assert report.phi_one == pytest.approx(dp, abs=1e-8)


def test_homogeneity_rejects_negative_mass(tree3):
    with pytest.raises(ValueError):
        check_homogeneity(tree3, tree3, StagewiseMetric(), 0, 0, -1.0)


def test_parallel_table_matches_serial(rng):
    A, B = random_tree(rng, 3, 3, min_branching=2), random_tree(rng, 3, 3, min_branching=2)
    metric = StagewiseMetric()
    serial = nested_dp(A, B, metric)
    parallel = nested_dp(A, B, metric, workers=2)
    assert parallel.value_p == serial.value_p
    for s, p in zip(serial.table.values, parallel.table.values):
        assert np.array_equal(s, p)
