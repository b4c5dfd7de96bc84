"""Thin adapter from :class:`LpProblem` to SciPy's HiGHS LP interface."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from .problem import (EQ, GE, INFEASIBLE, ITERATION_LIMIT, LE, OPTIMAL,
                      UNBOUNDED, LpProblem, LpSolution)


def split_rows(problem: LpProblem):
    """Return (A_ub, b_ub, A_eq, b_eq) with ``>=`` rows negated into ``<=``."""
    A = problem.matrix()
    le = problem.senses == LE
    ge = problem.senses == GE
    eq = problem.senses == EQ
    ub_rows = np.flatnonzero(le | ge)
    sign = np.where(ge[ub_rows], -1.0, 1.0)
    A_ub = A[ub_rows].multiply(sign[:, None]).tocsr() if ub_rows.size else None
    b_ub = problem.rhs[ub_rows] * sign if ub_rows.size else None
    A_eq = A[eq] if eq.any() else None
    b_eq = problem.rhs[eq] if eq.any() else None
    return A_ub, b_ub, A_eq, b_eq


def solve_lp_highs(problem: LpProblem) -> LpSolution:
    A_ub, b_ub, A_eq, b_eq = split_rows(problem)
    sign = -1.0 if problem.maximize else 1.0
    bounds = np.column_stack([
        np.where(np.isfinite(problem.lb), problem.lb, -np.inf),
        np.where(np.isfinite(problem.ub), problem.ub, np.inf),
    ])
    res = linprog(sign * problem.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    iters = int(getattr(res, "nit", 0) or 0)
    if res.status == 0:
        x = np.minimum(np.maximum(res.x, problem.lb), problem.ub)
        return LpSolution(OPTIMAL, x, problem.objective_value(x), iters)
    if res.status == 2:
        return LpSolution(INFEASIBLE, iterations=iters)
    if res.status == 3:
        return LpSolution(UNBOUNDED, iterations=iters)
    return LpSolution(ITERATION_LIMIT, iterations=iters)
