"""Monolithic linear programs for the nested distance.

Two formulations are assembled:

* leaf form: one variable per leaf pair (i, j); for every same-stage node
  pair (k, l) and every leaf i below k the conditional-marginal constraint
  ``sum_{j below l} pi_ij = P(i|k) * pi_kl`` is written with pi_kl replaced by
  the sum of the leaf variables below (k, l), which keeps it linear;
* successor form: one variable per same-stage node pair at every stage,
  linked to the successor pairs only.

Both are used as oracles for the recursion in :mod:`treedist.nested.dp`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..lp import TripletBuilder, solve_lp
from ..metric import StagewiseMetric
from ..tree import DEFAULT_TOL, ProbabilityTree, require_valid
from .table import NestedResult, NodeStageMismatchError, check_pair, path_distance_tables

__all__ = [
    "LPSizeError",
    "DEFAULT_LP_CAP",
    "lp_cap",
    "nested_lp",
    "leaf_form",
    "successor_form",
    "phi",
    "ConstraintEquivalenceReport",
    "check_constraint_equivalence",
    "HomogeneityReport",
    "check_homogeneity",
]

DEFAULT_LP_CAP = 10_000
EQUIVALENCE_CAP = 2_000


class LPSizeError(ValueError):
    pass


def lp_cap() -> int:
    """Leaf-pair cap for the monolithic LP; ``TREEDIST_LP_CAP`` overrides it."""
    return int(os.environ.get("TREEDIST_LP_CAP", DEFAULT_LP_CAP))


def _cond(tree: ProbabilityTree, nodes, k: int) -> np.ndarray:
    pk = tree.prob[k]
    if pk == 0:
        return np.zeros(len(nodes))
    return tree.prob[np.asarray(nodes, dtype=np.int64)] / pk


def _leaf_positions(tree: ProbabilityTree) -> dict[int, int]:
    return {int(i): pos for pos, i in enumerate(tree.nodes_at(tree.n_stages))}


def leaf_form(A: ProbabilityTree, B: ProbabilityTree, metric: StagewiseMetric) -> tuple[np.ndarray, TripletBuilder]:
    """Cost vector and constraint rows over leaf-pair variables x[i * |B_T| + j]."""
    T = check_pair(A, B, metric)
    D = path_distance_tables(A, B, metric)[T - 1]
    la, lb = _leaf_positions(A), _leaf_positions(B)
    nb = len(lb)
    rows = TripletBuilder(len(la) * nb)
    below_a = {k: [la[i] for i in A.subtree_leaves(k)] for k in range(A.n_nodes)}
    below_b = {l: [lb[j] for j in B.subtree_leaves(l)] for l in range(B.n_nodes)}
    # at the last stage every constraint reads pi_ij = pi_ij and is dropped
    for t in range(1, T):
        for k in A.nodes_at(t):
            Ik = below_a[k]
            pik = _cond(A, A.subtree_leaves(k), k)
            for l in B.nodes_at(t):
                Jl = below_b[l]
                qjl = _cond(B, B.subtree_leaves(l), l)
                block = [i * nb + j for i in Ik for j in Jl]
                for pos, i in enumerate(Ik):
                    coef = {c: -pik[pos] for c in block}
                    for j in Jl:
                        coef[i * nb + j] += 1.0
                    rows.add_row(coef.keys(), coef.values())
                for pos, j in enumerate(Jl):
                    coef = {c: -qjl[pos] for c in block}
                    for i in Ik:
                        coef[i * nb + j] += 1.0
                    rows.add_row(coef.keys(), coef.values())
    rows.add_row(range(rows.n_vars), [1.0] * rows.n_vars, 1.0)
    return D.ravel().copy(), rows


@dataclass(eq=False)
class SuccessorLP:
    cost: np.ndarray
    rows: TripletBuilder
    index: dict[tuple[int, int], int]
    leaf_slice: slice  # positions of the leaf-pair variables, in leaf-form order


def successor_form(
    A: ProbabilityTree,
    B: ProbabilityTree,
    metric: StagewiseMetric,
    k: int = 0,
    l: int = 0,
    mass: float = 1.0,
) -> SuccessorLP:
    """Successor-form program on the subtrees at (k, l) with pi_kl fixed to ``mass``.

    With the default arguments this is the full nested-distance program.
    Variables are indexed stage by stage; the leaf pairs come last and in
    the same order as in :func:`leaf_form`.
    """
    T = check_pair(A, B, metric)
    t0 = int(A.stage[k])
    if t0 != B.stage[l]:
        raise NodeStageMismatchError(f"nodes {A.ids[k]} and {B.ids[l]} are at different stages")
    D = path_distance_tables(A, B, metric)[T - 1]
    a_leaf0, b_leaf0 = A.nodes_at(T)[0], B.nodes_at(T)[0]

    layers_a, layers_b = [[k]], [[l]]
    for _ in range(t0, T):
        layers_a.append([c for n in layers_a[-1] for c in A.children[n]])
        layers_b.append([c for n in layers_b[-1] for c in B.children[n]])
    index: dict[tuple[int, int], int] = {}
    for nodes_a, nodes_b in zip(layers_a, layers_b):
        for a in nodes_a:
            for b in nodes_b:
                index[(a, b)] = len(index)
    n_vars = len(index)
    n_leaf = len(layers_a[-1]) * len(layers_b[-1])

    cost = np.zeros(n_vars)
    for a in layers_a[-1]:
        for b in layers_b[-1]:
            cost[index[(a, b)]] = D[a - a_leaf0, b - b_leaf0]

    rows = TripletBuilder(n_vars)
    rows.add_row([index[(k, l)]], [1.0], float(mass))
    for nodes_a, nodes_b in zip(layers_a[:-1], layers_b[:-1]):
        for a in nodes_a:
            ra = A.children[a]
            pr = _cond(A, ra, a)
            for b in nodes_b:
                sb = B.children[b]
                qs = _cond(B, sb, b)
                kl = index[(a, b)]
                for r, p_r in zip(ra, pr):
                    rows.add_row([index[(r, s)] for s in sb] + [kl], [1.0] * len(sb) + [-p_r])
                for s, q_s in zip(sb, qs):
                    rows.add_row([index[(r, s)] for r in ra] + [kl], [1.0] * len(ra) + [-q_s])
                rows.add_row([index[(r, s)] for r in ra for s in sb] + [kl], [1.0] * (len(ra) * len(sb)) + [-1.0])
    return SuccessorLP(cost, rows, index, slice(n_vars - n_leaf, n_vars))


def _check_size(A: ProbabilityTree, B: ProbabilityTree, cap: int) -> None:
    size = len(A.nodes_at(A.n_stages)) * len(B.nodes_at(B.n_stages))
    if size > cap:
        raise LPSizeError(f"monolithic LP has {size} leaf pairs, above the cap of {cap}")


def nested_lp(
    A: ProbabilityTree,
    B: ProbabilityTree,
    metric: StagewiseMetric,
    *,
    cap: int | None = None,
    tol: float = DEFAULT_TOL,
) -> NestedResult:
    """Nested distance from the leaf-form program; the optimal leaf plan is returned too."""
    require_valid(A, tol)
    require_valid(B, tol)
    check_pair(A, B, metric)
    _check_size(A, B, lp_cap() if cap is None else cap)
    cost, rows = leaf_form(A, B, metric)
    sol = solve_lp(cost, rows)
    plan = sol.x.reshape(len(A.nodes_at(A.n_stages)), len(B.nodes_at(B.n_stages)))
    return NestedResult(sol.value, "lp", metric.p, plan=plan)


def phi(A: ProbabilityTree, B: ProbabilityTree, metric: StagewiseMetric, k: int, l: int, mass: float) -> float:
    """Optimal value of the mass-propagating sub-problem at (k, l) with pi_kl = ``mass``."""
    prog = successor_form(A, B, metric, k, l, mass)
    return solve_lp(prog.cost, prog.rows).value


@dataclass
class ConstraintEquivalenceReport:
    leaf_value: float
    successor_value: float
    value_gap: float
    successor_solution_in_leaf_form: float  # max constraint residual
    leaf_solution_in_successor_form: float
    tol: float = 1e-8

    @property
    def passed(self) -> bool:
        scale = max(1.0, abs(self.leaf_value))
        return (
            self.value_gap <= self.tol * scale
            and self.successor_solution_in_leaf_form <= self.tol
            and self.leaf_solution_in_successor_form <= self.tol
        )

    def to_dict(self) -> dict:
        return {
            "leaf_value": self.leaf_value,
            "successor_value": self.successor_value,
            "value_gap": self.value_gap,
            "successor_solution_in_leaf_form": self.successor_solution_in_leaf_form,
            "leaf_solution_in_successor_form": self.leaf_solution_in_successor_form,
            "passed": self.passed,
        }


def _lift(A: ProbabilityTree, B: ProbabilityTree, x_leaf: np.ndarray, prog: SuccessorLP) -> np.ndarray:
    """Node-pair masses pi_kl = sum of leaf-pair masses below (k, l)."""
    T = A.n_stages
    X = x_leaf.reshape(len(A.nodes_at(T)), len(B.nodes_at(T)))
    lifted = np.zeros(prog.rows.n_vars)
    for t in range(1, T + 1):
        na, nb = A.nodes_at(t), B.nodes_at(t)
        Ma = np.array([[A.ancestor_at(int(i), t) == k for i in A.nodes_at(T)] for k in na], dtype=float)
        Mb = np.array([[B.ancestor_at(int(j), t) == l for j in B.nodes_at(T)] for l in nb], dtype=float)
        masses = Ma @ X @ Mb.T
        for a, k in enumerate(na):
            for b, l in enumerate(nb):
                lifted[prog.index[(int(k), int(l))]] = masses[a, b]
    return lifted


def check_constraint_equivalence(
    A: ProbabilityTree,
    B: ProbabilityTree,
    metric: StagewiseMetric | None = None,
    *,
    tol: float = 1e-8,
    cap: int = EQUIVALENCE_CAP,
) -> ConstraintEquivalenceReport:
    """Solve the leaf-form and successor-form programs and cross-check their optima.

    Each optimal solution is also substituted into the other formulation's
    constraints; negative entries count as violations.
    """
    metric = metric or StagewiseMetric()
    require_valid(A)
    require_valid(B)
    _check_size(A, B, cap)
    cost_leaf, leaf_rows = leaf_form(A, B, metric)
    prog = successor_form(A, B, metric)
    leaf_sol = solve_lp(cost_leaf, leaf_rows)
    succ_sol = solve_lp(prog.cost, prog.rows)

    x_from_succ = succ_sol.x[prog.leaf_slice]
    succ_in_leaf = max(leaf_rows.residual(x_from_succ), float(-min(0.0, x_from_succ.min())))
    lifted = _lift(A, B, leaf_sol.x, prog)
    leaf_in_succ = max(prog.rows.residual(lifted), float(-min(0.0, lifted.min())))
    return ConstraintEquivalenceReport(
        leaf_sol.value,
        succ_sol.value,
        abs(leaf_sol.value - succ_sol.value),
        succ_in_leaf,
        leaf_in_succ,
        tol,
    )


@dataclass
class HomogeneityReport:
    alpha: float
    phi_alpha: float
    phi_one: float
    residual: float
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return self.residual <= self.tol * max(1.0, self.alpha)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "phi_alpha": self.phi_alpha,
            "phi_one": self.phi_one,
            "residual": self.residual,
            "passed": self.passed,
        }


def check_homogeneity(
    A: ProbabilityTree,
    B: ProbabilityTree,
    metric: StagewiseMetric,
    k: int,
    l: int,
    alpha: float,
    *,
    tol: float = 1e-9,
) -> HomogeneityReport:
    """Compare Phi_t(k, l, alpha) with alpha * Phi_t(k, l, 1)."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    phi_alpha = phi(A, B, metric, k, l, alpha)
    phi_one = phi(A, B, metric, k, l, 1.0)
    return HomogeneityReport(alpha, phi_alpha, phi_one, abs(phi_alpha - alpha * phi_one), tol)
