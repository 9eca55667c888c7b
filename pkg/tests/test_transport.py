import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from treedist import StageMarginal, StagewiseMetric, TransportProblem, solve_transport, wasserstein_p
from treedist.transport import (
    InfeasibleTransportError,
    TransportValidationError,
    solve_local,
    total_mass_redundancy,
    transport_value,
)


def brute_force_uniform(C):
    """Uniform n-to-n transport: an optimum sits on a permutation matrix."""
    n = C.shape[0]
    return min(sum(C[i, s[i]] for i in range(n)) for s in itertools.permutations(range(n))) / n


def highs_value(C, a, b):
    m, n = C.shape
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        A[m + j, j::n] = 1
    res = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([a, b]), method="highs")
    return res.fun


def test_single_atom():
    plan = solve_transport(TransportProblem([[7.0]], [1.0], [1.0]))
    assert plan.value == 7.0
    assert plan.plan.tolist() == [[1.0]]


def test_zero_diagonal_identity():
    C = np.array([[0.0, 1.0, 4.0], [1.0, 0.0, 1.0], [4.0, 1.0, 0.0]])
    a = np.array([0.2, 0.5, 0.3])
    plan = solve_transport(TransportProblem(C, a, a))
    assert plan.value == 0.0
    assert np.allclose(plan.plan, np.diag(a))


def test_two_point_vertex_enumeration():
    # uniform {0, 1} against uniform {0, 2} with |x - y|: the feasible set is
    # pi = [[s, 0.5 - s], [0.5 - s, s]] with vertices s = 0 and s = 0.5
    P = StageMarginal(np.array([[0.0], [1.0]]), np.array([0.5, 0.5]))
    Q = StageMarginal(np.array([[0.0], [2.0]]), np.array([0.5, 0.5]))
    metric = StagewiseMetric(p=1, ground="abs")
    C = metric.cost_matrix(1, P.points, Q.points)
    vertices = [np.array([[s, 0.5 - s], [0.5 - s, s]]) for s in (0.0, 0.5)]
    oracle = min(float(np.sum(C * v)) for v in vertices)
    assert oracle == 0.5
    assert wasserstein_p(P, Q, metric) == pytest.approx(oracle, abs=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_uniform_against_permutations(rng, n):
    for _ in range(5):
        C = rng.uniform(0, 3, size=(n, n))
        u = np.full(n, 1.0 / n)
        assert abs(transport_value(C, u, u) - brute_force_uniform(C)) <= 1e-10


def test_against_highs_rectangular_and_degenerate(rng):
    for trial in range(60):
        m, n = rng.integers(1, 9, size=2)
        if trial % 3 == 0:
            C = rng.integers(0, 3, size=(m, n)).astype(float)  # many ties
            a = np.full(m, 1.0 / m)
            b = np.full(n, 1.0 / n)
        else:
            C = rng.uniform(0, 5, size=(m, n))
            a = rng.dirichlet(np.ones(m))
            b = rng.dirichlet(np.ones(n))
        plan = solve_transport(TransportProblem(C, a, b))
        assert plan.value == pytest.approx(highs_value(C, a, b), abs=1e-10)
        assert plan.marginal_residual(a, b) <= 1e-12
        assert plan.plan.min() >= 0.0


def test_larger_problem_uses_vectorised_pricing(rng):
    C = rng.uniform(size=(30, 25))
    a, b = rng.dirichlet(np.ones(30)), rng.dirichlet(np.ones(25))
    assert transport_value(C, a, b) == pytest.approx(highs_value(C, a, b), abs=1e-10)


def test_zero_mass_atoms_are_ignored():
    C = np.array([[1.0, 2.0], [3.0, 4.0]])
    plan = solve_transport(TransportProblem(C, [1.0, 0.0], [0.0, 1.0]))
    assert plan.value == 2.0
    assert plan.plan.tolist() == [[0.0, 1.0], [0.0, 0.0]]


def test_solve_local_matches_checked_solver(rng):
    C = rng.uniform(size=(3, 4))
    a, b = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(4))
    value, flows = solve_local(C, a, b)
    assert value == pytest.approx(solve_transport(TransportProblem(C, a, b)).value, abs=1e-15)
    assert np.allclose(flows.sum(axis=1), a) and np.allclose(flows.sum(axis=0), b)


def test_unbalanced_reports_residual():
    with pytest.raises(InfeasibleTransportError) as info:
        solve_transport(TransportProblem(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.6]))
    assert info.value.residual == pytest.approx(-0.1)


@pytest.mark.parametrize(
    "cost, a, b",
    [
        ([[1.0, -1.0]], [1.0], [0.5, 0.5]),
        ([[1.0, np.nan]], [1.0], [0.5, 0.5]),
        ([[1.0, 1.0]], [1.0], [1.5, -0.5]),
        ([[1.0, 1.0]], [1.0], [1.0]),
    ],
)
def test_invalid_problems(cost, a, b):
    with pytest.raises(TransportValidationError):
        solve_transport(TransportProblem(cost, a, b))


def test_total_mass_row_is_redundant(rng):
    for _ in range(10):
        m, n = rng.integers(1, 6, size=2)
        problem = TransportProblem(rng.uniform(size=(m, n)), rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(n)))
        with_row, without_row = total_mass_redundancy(problem)
        assert with_row == pytest.approx(without_row, abs=1e-10)
        assert with_row == pytest.approx(solve_transport(problem).value, abs=1e-10)


marginals = st.integers(1, 5).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(-5, 5), min_size=n, max_size=n),
        st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n),
    )
).map(lambda pw: StageMarginal(np.array(pw[0]).reshape(-1, 1), np.array(pw[1]) / sum(pw[1])))


@settings(max_examples=60, deadline=None)
@given(marginals, marginals, st.sampled_from([1.0, 2.0]))
def test_wasserstein_symmetry_and_identity(P, Q, p):
    metric = StagewiseMetric(p=p)
    pq, qp = wasserstein_p(P, Q, metric), wasserstein_p(Q, P, metric)
    assert pq >= 0.0
    assert abs(pq - qp) <= 1e-10 * max(1.0, pq)
    assert wasserstein_p(P, P, metric) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(marginals, marginals, marginals)
def test_wasserstein_one_triangle_inequality(P, Q, R):
    metric = StagewiseMetric(p=1)
    assert wasserstein_p(P, R, metric) <= wasserstein_p(P, Q, metric) + wasserstein_p(Q, R, metric) + 1e-10
