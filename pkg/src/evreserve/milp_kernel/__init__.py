"""Self-contained LP solver and branch-and-bound for small binary layers."""

from .bnb import solve_milp
from .lpformat import dumps, loads
from .problem import (EQ, GAP_LIMIT, GE, INFEASIBLE, ITERATION_LIMIT, LE,
                      OPTIMAL, TIME_LIMIT, UNBOUNDED, LpProblem, LpSolution,
                      MilpSolution)
from .simplex import solve_lp

__all__ = [
    "EQ", "GE", "LE", "OPTIMAL", "INFEASIBLE", "UNBOUNDED", "GAP_LIMIT",
    "TIME_LIMIT", "ITERATION_LIMIT", "LpProblem", "LpSolution", "MilpSolution",
    "solve_lp", "solve_milp", "dumps", "loads",
]
