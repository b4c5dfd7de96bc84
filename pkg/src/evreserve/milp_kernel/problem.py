"""Problem and solution containers shared by the LP and MILP solvers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

LE, EQ, GE = "L", "E", "G"
SENSES = (LE, EQ, GE)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
GAP_LIMIT = "gap_limit"
TIME_LIMIT = "time_limit"
ITERATION_LIMIT = "iteration_limit"


@dataclass
class LpProblem:
    """Linear (mixed-integer) program in row-major triplet form.

    Rows read ``sum_j A[i, j] x[j]  (<=|=|>=)  rhs[i]`` with the sense given by
    ``senses[i]`` in ``{"L", "E", "G"}``. Integer columns are flagged through
    ``integrality``; the LP solver ignores the flag.
    """

    c: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    senses: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray
    maximize: bool = False
    obj_offset: float = 0.0
    var_names: Optional[list] = None
    row_names: Optional[list] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.vals = np.asarray(self.vals, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.senses = np.asarray(self.senses, dtype="<U1")
        self.lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (n,)).copy()
        self.ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (n,)).copy()
        integ = np.zeros(n, dtype=bool) if self.integrality is None else self.integrality
        self.integrality = np.broadcast_to(np.asarray(integ, dtype=bool), (n,)).copy()
        if not (self.rows.size == self.cols.size == self.vals.size):
            raise ValueError("triplet arrays must have equal length")
        if self.senses.size != self.rhs.size:
            raise ValueError("one sense per constraint row is required")
        if self.rows.size and (self.rows.max() >= self.rhs.size or self.rows.min() < 0):
            raise ValueError("row index out of range")
        if self.cols.size and (self.cols.max() >= n or self.cols.min() < 0):
            raise ValueError("column index out of range")
        if not np.all(np.isin(self.senses, SENSES)):
            raise ValueError(f"senses must be drawn from {SENSES}")
        if not (np.all(np.isfinite(self.vals)) and np.all(np.isfinite(self.c))
                and np.all(np.isfinite(self.rhs))):
            raise ValueError("coefficients must be finite")
        if np.any(self.lb > self.ub):
            bad = int(np.flatnonzero(self.lb > self.ub)[0])
            raise ValueError(f"variable {bad} has lb > ub")

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.rhs.size

    def matrix(self) -> sp.csr_matrix:
        """Constraint matrix as CSR (duplicate triplets are summed)."""
        return sp.csr_matrix((self.vals, (self.rows, self.cols)),
                             shape=(self.n_rows, self.n_vars))

    def with_bounds(self, lb, ub) -> "LpProblem":
        """Shallow copy with replaced variable bounds (used by branching)."""
        return LpProblem(self.c, self.rows, self.cols, self.vals, self.senses,
                         self.rhs, lb, ub, self.integrality, self.maximize,
                         self.obj_offset, self.var_names, self.row_names)

    def objective_value(self, x) -> float:
        return float(self.c @ np.asarray(x, dtype=float)) + self.obj_offset

    def max_violation(self, x) -> float:
        """Largest absolute violation of any row or bound at point ``x``."""
        x = np.asarray(x, dtype=float)
        act = self.matrix() @ x
        viol = np.zeros(self.n_rows)
        le = self.senses == LE
        ge = self.senses == GE
        eq = self.senses == EQ
        viol[le] = np.maximum(act[le] - self.rhs[le], 0.0)
        viol[ge] = np.maximum(self.rhs[ge] - act[ge], 0.0)
        viol[eq] = np.abs(act[eq] - self.rhs[eq])
        bviol = np.maximum(np.maximum(self.lb - x, x - self.ub), 0.0)
        return float(max(viol.max(initial=0.0), bviol.max(initial=0.0)))


@dataclass
class LpSolution:
    status: str
    x: Optional[np.ndarray] = None
    objective: float = float("nan")
    iterations: int = 0


@dataclass
class MilpSolution:
    status: str
    x: Optional[np.ndarray] = None
    objective: float = float("nan")
    bound: float = float("nan")
    gap: float = float("inf")
    nodes: int = 0
    lp_iterations: int = 0
    log: list = field(default_factory=list)
