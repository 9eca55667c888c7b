"""Sparse equality-form linear programs, solved with HiGHS through scipy.

Only the monolithic nested-distance programs and a few verification
routines go through here; every transport problem inside the recursions is
solved by :mod:`treedist.transport`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

__all__ = ["LPError", "LPSolution", "solve_lp", "TripletBuilder"]

# tight enough that residual checks at 1e-8 see solver noise only
_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


class LPError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LPSolution:
    value: float
    x: np.ndarray


class TripletBuilder:
    """Accumulates constraint rows in COO triplet form."""

    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.rhs: list[float] = []

    def add_row(self, cols, vals, rhs: float = 0.0) -> None:
        r = len(self.rhs)
        cols = list(cols)
        self.rows.extend([r] * len(cols))
        self.cols.extend(cols)
        self.vals.extend(vals)
        self.rhs.append(rhs)

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    def matrix(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(
            (np.asarray(self.vals, dtype=float), (self.rows, self.cols)),
            shape=(self.n_rows, self.n_vars),
        )

    def residual(self, x: np.ndarray) -> float:
        """Largest absolute equality violation at ``x``."""
        if not self.rhs:
            return 0.0
        return float(np.abs(self.matrix() @ x - np.asarray(self.rhs)).max())


def solve_lp(cost: np.ndarray, constraints: TripletBuilder) -> LPSolution:
    """min cost.x subject to the equality rows and x >= 0."""
    res = linprog(
        np.asarray(cost, dtype=float),
        A_eq=constraints.matrix(),
        b_eq=np.asarray(constraints.rhs, dtype=float),
        bounds=(0, None),
        method="highs-ds",
        options=_OPTIONS,
    )
    if res.status != 0:
        raise LPError(f"LP solve failed: {res.message}")
    x = np.maximum(res.x, 0.0)
    return LPSolution(float(np.dot(cost, x)), x)
