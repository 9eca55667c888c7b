"""Exact solver for the discrete optimal transport problem.

The solver is a primal transportation (network) simplex on the bipartite
supply/demand graph. The basis is a spanning tree of m + n - 1 cells. The
start comes from the north-west corner rule. Pivots use the most negative
reduced cost, and switch to Bland's smallest-index rule after a run of
degenerate pivots, so the method always terminates.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .metric import StagewiseMetric
from .tree import StageMarginal

__all__ = [
    "TransportError",
    "InfeasibleTransportError",
    "TransportValidationError",
    "TransportProblem",
    "TransportPlan",
    "solve_transport",
    "transport_value",
    "wasserstein_p",
    "wasserstein_plan",
    "solve_local",
    "total_mass_redundancy",
]

BALANCE_TOL = 1e-9


class TransportError(ValueError):
    pass


class InfeasibleTransportError(TransportError):
    """Supply and demand totals differ by more than the balance tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class TransportValidationError(TransportError):
    """Negative masses, non-finite costs or shape mismatches."""


@dataclass(frozen=True, eq=False)
class TransportProblem:
    cost: np.ndarray  # (m, n), already raised to the order p
    supply: np.ndarray  # (m,)
    demand: np.ndarray  # (n,)

    def __post_init__(self):
        object.__setattr__(self, "cost", np.asarray(self.cost, dtype=float))
        object.__setattr__(self, "supply", np.asarray(self.supply, dtype=float).reshape(-1))
        object.__setattr__(self, "demand", np.asarray(self.demand, dtype=float).reshape(-1))

    def check(self, balance_tol: float = BALANCE_TOL) -> None:
        c, a, b = self.cost, self.supply, self.demand
        if c.ndim != 2 or c.shape != (a.size, b.size):
            raise TransportValidationError(f"cost shape {c.shape} does not match masses ({a.size}, {b.size})")
        if not np.all(np.isfinite(c)):
            raise TransportValidationError("cost matrix has non-finite entries")
        if np.any(c < 0):
            raise TransportValidationError("cost matrix has negative entries")
        if np.any(a < 0) or np.any(b < 0) or not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise TransportValidationError("masses must be finite and non-negative")
        residual = float(a.sum() - b.sum())
        if abs(residual) > balance_tol:
            raise InfeasibleTransportError(
                f"unbalanced masses: supply {a.sum():.17g} vs demand {b.sum():.17g}", residual
            )


@dataclass(frozen=True, eq=False)
class TransportPlan:
    plan: np.ndarray
    value: float
    iterations: int = 0

    def marginal_residual(self, supply: np.ndarray, demand: np.ndarray) -> float:
        rows = np.abs(self.plan.sum(axis=1) - supply).max(initial=0.0)
        cols = np.abs(self.plan.sum(axis=0) - demand).max(initial=0.0)
        return float(max(rows, cols))


def solve_transport(
    problem: TransportProblem,
    balance_tol: float = BALANCE_TOL,
) -> TransportPlan:
    """Optimal plan and value of min <c, pi> subject to the marginal constraints."""
    problem.check(balance_tol)
    c, a, b = problem.cost, problem.supply, problem.demand
    total_a, total_b = a.sum(), b.sum()
    if total_b > 0 and total_a != total_b:
        b = b * (total_a / total_b)

    rows = np.flatnonzero(a > 0)
    cols = np.flatnonzero(b > 0)
    plan = np.zeros(c.shape)
    if rows.size == 0 or cols.size == 0:
        return TransportPlan(plan, 0.0, 0)
    sub = c[np.ix_(rows, cols)]
    flows, iterations = _network_simplex(sub, a[rows], b[cols])
    plan[np.ix_(rows, cols)] = flows
    value = float(np.sum(sub * flows))
    return TransportPlan(plan, value, iterations)


def transport_value(cost: np.ndarray, supply: np.ndarray, demand: np.ndarray) -> float:
    return solve_transport(TransportProblem(cost, supply, demand)).value


def wasserstein_plan(P: StageMarginal, Q: StageMarginal, metric: StagewiseMetric, t: int = 1) -> TransportPlan:
    cost = metric.cost_matrix(t, P.points, Q.points)
    return solve_transport(TransportProblem(cost, P.probs, Q.probs))


def wasserstein_p(P: StageMarginal, Q: StageMarginal, metric: StagewiseMetric, t: int = 1) -> float:
    """Optimal transport cost between two stage marginals, on the d**p scale,
    using the ground metric of stage ``t``."""
    return wasserstein_plan(P, Q, metric, t).value


def solve_local(cost: np.ndarray, supply: np.ndarray, demand: np.ndarray) -> tuple[float, np.ndarray]:
    """Optimal value and plan for pre-validated strictly positive, balanced masses.

    Used by the tree recursions, which build many tiny problems whose
    marginals are conditional probabilities and need no re-validation.
    """
    flows, _ = _network_simplex(cost, supply, demand)
    return float(np.sum(cost * flows)), flows


_NUMPY_PRICING = 256


def _network_simplex(c: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, int]:
    m, n = c.shape
    if m == 1:
        return np.asarray(b, dtype=float).reshape(1, n).copy(), 0
    if n == 1:
        return np.asarray(a, dtype=float).reshape(m, 1).copy(), 0
    cl = c.tolist()

    # north-west corner start: a staircase spanning tree, degenerate cells included
    basis: list[tuple[int, int]] = []
    flow: list[float] = []
    ar, br = [float(x) for x in a], [float(x) for x in b]
    i = j = 0
    while True:
        x = min(ar[i], br[j])
        basis.append((i, j))
        flow.append(x)
        ar[i] -= x
        br[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1 or ar[i] <= br[j]:
            i += 1
        else:
            j += 1

    eps = 1e-12 * max(1.0, float(np.abs(c).max()))
    use_numpy = m * n > _NUMPY_PRICING
    max_iter = 50 * (m + n) * max(m, n) + 1000
    degenerate_run = 0
    bland = False
    u = [0.0] * m
    v = [0.0] * n
    for iteration in range(max_iter):
        # adjacency of the basis tree: nodes 0..m-1 are rows, m..m+n-1 columns
        adj: list[list[int]] = [[] for _ in range(m + n)]
        for e, (bi, bj) in enumerate(basis):
            adj[bi].append(e)
            adj[m + bj].append(e)

        # potentials u_i + v_j = c_ij on basic cells
        seen = [False] * (m + n)
        seen[0] = True
        stack = [0]
        while stack:
            node = stack.pop()
            for e in adj[node]:
                bi, bj = basis[e]
                if node < m:
                    if not seen[m + bj]:
                        v[bj] = cl[bi][bj] - u[bi]
                        seen[m + bj] = True
                        stack.append(m + bj)
                elif not seen[bi]:
                    u[bi] = cl[bi][bj] - v[bj]
                    seen[bi] = True
                    stack.append(bi)

        enter = _price(c, cl, u, v, basis, eps, bland, use_numpy)
        if enter is None:
            break
        ei, ej = enter

        # tree path from column node ej back to row node ei
        via = [-1] * (m + n)
        visited = [False] * (m + n)
        visited[ei] = True
        queue = deque([ei])
        target = m + ej
        while queue:
            node = queue.popleft()
            if node == target:
                break
            for e in adj[node]:
                bi, bj = basis[e]
                other = m + bj if node < m else bi
                if not visited[other]:
                    visited[other] = True
                    via[other] = e
                    queue.append(other)
        path: list[int] = []
        node = target
        while node != ei:
            e = via[node]
            path.append(e)
            bi, bj = basis[e]
            node = bi if node >= m else m + bj

        # cells at even positions of the path (0, 2, ...) lose flow
        minus = path[0::2]
        theta = min(flow[e] for e in minus)
        ties = [e for e in minus if flow[e] == theta]
        if bland and len(ties) > 1:
            leave = min(ties, key=lambda e: basis[e][0] * n + basis[e][1])
        else:
            leave = ties[0]

        if theta > 0:
            for pos, e in enumerate(path):
                flow[e] += -theta if pos % 2 == 0 else theta
            degenerate_run = 0
            bland = False
        else:
            degenerate_run += 1
            if degenerate_run > m + n:
                bland = True
        basis[leave] = (ei, ej)
        flow[leave] = theta
    else:
        raise TransportError(f"transport simplex did not converge in {max_iter} iterations")

    out = np.zeros((m, n))
    for (bi, bj), x in zip(basis, flow):
        out[bi, bj] = max(x, 0.0)
    return out, iteration


def _price(c, cl, u, v, basis, eps, bland, use_numpy):
    """Entering cell: most negative reduced cost, or the first negative one under Bland."""
    if use_numpy:
        n = c.shape[1]
        reduced = c - np.asarray(u)[:, None] - np.asarray(v)[None, :]
        for bi, bj in basis:
            reduced[bi, bj] = 0.0
        if bland:
            candidates = np.flatnonzero(reduced.ravel() < -eps)
            return None if candidates.size == 0 else divmod(int(candidates[0]), n)
        k = int(np.argmin(reduced))
        return None if reduced.flat[k] >= -eps else divmod(k, n)
    basic = set(basis)
    best, best_cell = -eps, None
    for i, row in enumerate(cl):
        ui = u[i]
        for j, cij in enumerate(row):
            r = cij - ui - v[j]
            if r < best and (i, j) not in basic:
                if bland:
                    return i, j
                best, best_cell = r, (i, j)
    return best_cell


def total_mass_redundancy(problem: TransportProblem) -> tuple[float, float]:
    """Optimal values of the transport LP with and without the extra
    ``sum(pi) = total mass`` row; the row is implied by the marginals."""
    from .lp import TripletBuilder, solve_lp

    problem.check()
    m, n = problem.cost.shape
    values = []
    for with_total in (True, False):
        rows = TripletBuilder(m * n)
        for i in range(m):
            rows.add_row(range(i * n, (i + 1) * n), [1.0] * n, float(problem.supply[i]))
        for j in range(n):
            rows.add_row(range(j, m * n, n), [1.0] * m, float(problem.demand[j]))
        if with_total:
            rows.add_row(range(m * n), [1.0] * (m * n), float(problem.supply.sum()))
        values.append(solve_lp(problem.cost.ravel(), rows).value)
    return values[0], values[1]
