"""Best-first branch-and-bound over LP relaxations for small binary layers."""

from __future__ import annotations

import heapq
import math
import time

import numpy as np

from .problem import (GAP_LIMIT, INFEASIBLE, OPTIMAL, TIME_LIMIT, UNBOUNDED,
                      LpProblem, MilpSolution)
from .simplex import solve_lp

INT_TOL = 1e-6


def _relative_gap(incumbent: float, bound: float) -> float:
    if not math.isfinite(incumbent):
        return math.inf
    return max(incumbent - bound, 0.0) / max(abs(incumbent), 1e-9)


def solve_milp(problem: LpProblem, gap_tol: float = 1e-6, node_limit: int = 100_000,
               time_limit: float | None = None, lp_engine: str = "simplex",
               rounding_heuristic: bool = True) -> MilpSolution:
    """Solve ``problem`` honouring its integrality mask.

    Nodes are explored best-bound first (ties broken by creation order) and the
    branching variable is the most fractional integer column, lowest index on
    ties, so identical inputs always produce identical trees. With
    ``rounding_heuristic`` the root relaxation is rounded up on every integer
    column and re-solved once to seed an incumbent; for big-M activation
    binaries this rounding is always feasible.

    A node-limit stop returns ``gap_limit`` and a time-limit stop returns
    ``time_limit``; both carry the incumbent (if any) and the best bound.
    """
    sign = -1.0 if problem.maximize else 1.0
    integer = np.flatnonzero(problem.integrality)
    start = time.perf_counter()

    inc_val = math.inf  # minimisation sense
    inc_x = None
    nodes = 0
    lp_iters = 0
    counter = 0
    heap = [(-math.inf, counter, problem.lb.copy(), problem.ub.copy())]
    status = None

    def prune_level():
        return inc_val - gap_tol * max(abs(inc_val), 1e-9) - 1e-12

    while heap:
        if inc_x is not None and _relative_gap(inc_val, heap[0][0]) <= gap_tol:
            break
        if nodes >= node_limit:
            status = GAP_LIMIT
            break
        if time_limit is not None and time.perf_counter() - start > time_limit:
            status = TIME_LIMIT
            break
        parent_bound, _, lb, ub = heapq.heappop(heap)
        if parent_bound >= prune_level():
            continue
        sol = solve_lp(problem.with_bounds(lb, ub), engine=lp_engine)
        nodes += 1
        lp_iters += sol.iterations
        if sol.status == UNBOUNDED:
            if nodes == 1:
                return MilpSolution(UNBOUNDED, nodes=nodes, lp_iterations=lp_iters)
            continue
        if sol.status != OPTIMAL:
            continue
        val = sign * sol.objective
        if val >= prune_level():
            continue
        xi = sol.x[integer]
        frac = np.abs(xi - np.round(xi))
        if integer.size == 0 or frac.max() <= INT_TOL:
            x = sol.x.copy()
            x[integer] = np.round(x[integer])
            inc_val, inc_x = val, x
            continue

        if rounding_heuristic and nodes == 1:
            lb_h, ub_h = lb.copy(), ub.copy()
            fixed = np.minimum(np.ceil(xi - INT_TOL), ub[integer])
            lb_h[integer] = fixed
            ub_h[integer] = fixed
            heur = solve_lp(problem.with_bounds(lb_h, ub_h), engine=lp_engine)
            lp_iters += heur.iterations
            if heur.status == OPTIMAL and sign * heur.objective < inc_val:
                inc_val = sign * heur.objective
                inc_x = heur.x.copy()
                inc_x[integer] = np.round(inc_x[integer])

        k = int(np.argmax(np.minimum(xi - np.floor(xi), np.ceil(xi) - xi)))
        j = int(integer[k])
        down_ub = ub.copy()
        down_ub[j] = math.floor(sol.x[j])
        up_lb = lb.copy()
        up_lb[j] = math.ceil(sol.x[j])
        counter += 1
        heapq.heappush(heap, (val, counter, lb, down_ub))
        counter += 1
        heapq.heappush(heap, (val, counter, up_lb, ub))

    open_bound = min((h[0] for h in heap), default=math.inf)
    if inc_x is None:
        if status is None:
            return MilpSolution(INFEASIBLE, nodes=nodes, lp_iterations=lp_iters)
        return MilpSolution(status, bound=sign * open_bound, nodes=nodes,
                            lp_iterations=lp_iters)
    bound = min(open_bound, inc_val)
    gap = _relative_gap(inc_val, bound)
    if status is None:
        status = OPTIMAL
    return MilpSolution(status, inc_x, problem.objective_value(inc_x), sign * bound,
                        gap, nodes, lp_iters)
