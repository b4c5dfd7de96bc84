"""Bounded-variable revised primal simplex.

Dense implementation intended for the small programs of the test suite and
the branch-and-bound oracle checks. The basis inverse is kept explicitly,
updated with a rank-one (product form) pivot and refactorized periodically.
Entering columns are priced with Dantzig's rule; after a run of degenerate
pivots the solver falls back to Bland's rule until progress resumes.
"""

from __future__ import annotations

import numpy as np

from .problem import (GE, INFEASIBLE, ITERATION_LIMIT, LE, OPTIMAL,
                      UNBOUNDED, LpProblem, LpSolution)

FEAS_TOL = 1e-7
OPT_TOL = 1e-7
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 50
BLAND_AFTER = 30


class _Core:
    """min c.x  s.t.  A x = b,  lo <= x <= hi  from a primal feasible basis."""

    def __init__(self, A, b, lo, hi, basis, x, feas_tol, opt_tol):
        self.A = A
        self.b = b
        self.lo = lo
        self.hi = hi
        self.basis = np.array(basis, dtype=np.int64)
        self.x = x
        self.feas_tol = feas_tol
        self.opt_tol = opt_tol
        self.iterations = 0
        self.refactor()

    def refactor(self):
        B = self.A[:, self.basis]
        self.Binv = np.linalg.inv(B)
        nonbasic = np.ones(self.A.shape[1], dtype=bool)
        nonbasic[self.basis] = False
        rhs = self.b - self.A[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = self.Binv @ rhs

    def run(self, c, max_iter):
        A, lo, hi, x = self.A, self.lo, self.hi, self.x
        n_cols = A.shape[1]
        degenerate_run = 0
        since_refactor = 0
        while True:
            if self.iterations >= max_iter:
                return ITERATION_LIMIT
            basis = self.basis
            y = c[basis] @ self.Binv
            d = c - y @ A
            nonbasic = np.ones(n_cols, dtype=bool)
            nonbasic[basis] = False
            up = nonbasic & (d < -self.opt_tol) & (x < hi - self.feas_tol)
            down = nonbasic & (d > self.opt_tol) & (x > lo + self.feas_tol)
            eligible = up | down
            if not eligible.any():
                return OPTIMAL
            bland = degenerate_run >= BLAND_AFTER
            if bland:
                j = int(np.flatnonzero(eligible)[0])
            else:
                score = np.where(eligible, np.abs(d), -1.0)
                j = int(np.argmax(score))
            direction = 1.0 if up[j] else -1.0

            alpha = self.Binv @ A[:, j]
            rate = -direction * alpha
            xb = x[basis]
            lob = lo[basis]
            hib = hi[basis]

            dec = rate < -PIVOT_TOL
            inc = rate > PIVOT_TOL
            with np.errstate(divide="ignore", invalid="ignore"):
                exact = np.full(rate.size, np.inf)
                exact[dec] = (xb[dec] - lob[dec]) / -rate[dec]
                exact[inc] = (hib[inc] - xb[inc]) / rate[inc]
                relaxed = np.full(rate.size, np.inf)
                relaxed[dec] = (xb[dec] - lob[dec] + self.feas_tol) / -rate[dec]
                relaxed[inc] = (hib[inc] - xb[inc] + self.feas_tol) / rate[inc]
            exact = np.maximum(exact, 0.0)
            flip = hi[j] - lo[j]
            theta_max = relaxed.min(initial=np.inf)
            if not np.isfinite(theta_max) and not np.isfinite(flip):
                return UNBOUNDED

            if flip <= theta_max:
                # bound flip, basis unchanged
                theta = flip
                x[basis] = xb + rate * theta
                x[j] = hi[j] if direction > 0 else lo[j]
                self.iterations += 1
                degenerate_run = 0
                continue

            cand = np.flatnonzero(exact <= theta_max)
            if bland:
                best = exact[cand].min()
                tied = cand[exact[cand] <= best + 1e-12]
                r = int(tied[np.argmin(basis[tied])])
            else:
                r = int(cand[np.argmax(np.abs(rate[cand]))])
            theta = exact[r]

            x[basis] = xb + rate * theta
            x[j] = x[j] + direction * theta
            leaving = basis[r]
            x[leaving] = lo[leaving] if rate[r] < 0 else hi[leaving]

            piv = alpha[r]
            row_r = self.Binv[r] / piv
            self.Binv -= np.outer(alpha, row_r)
            self.Binv[r] = row_r
            basis[r] = j

            self.iterations += 1
            since_refactor += 1
            degenerate_run = degenerate_run + 1 if theta <= 1e-12 else 0
            if since_refactor >= REFACTOR_EVERY:
                self.refactor()
                since_refactor = 0


def _standard_form(problem: LpProblem):
    """Append one slack per row so every row becomes an equality."""
    m, n = problem.n_rows, problem.n_vars
    A = np.zeros((m, n + m))
    np.add.at(A, (problem.rows, problem.cols), problem.vals)
    A[:, n:] = np.eye(m)
    slo = np.zeros(m)
    shi = np.zeros(m)
    shi[problem.senses == LE] = np.inf
    slo[problem.senses == GE] = -np.inf
    lo = np.concatenate([problem.lb, slo])
    hi = np.concatenate([problem.ub, shi])
    c = problem.c * (-1.0 if problem.maximize else 1.0)
    c = np.concatenate([c, np.zeros(m)])
    return A, problem.rhs.astype(float).copy(), c, lo, hi


def solve_lp(problem: LpProblem, engine: str = "simplex", feas_tol: float = FEAS_TOL,
             opt_tol: float = OPT_TOL, max_iter: int | None = None) -> LpSolution:
    """Solve the LP relaxation of ``problem`` (integrality is ignored).

    ``engine="highs"`` delegates to SciPy's HiGHS interface and is used for the
    full-size simulation programs; ``"simplex"`` runs the in-house solver.
    """
    if engine == "highs":
        from .highs import solve_lp_highs
        return solve_lp_highs(problem)
    if engine != "simplex":
        raise ValueError(f"unknown LP engine {engine!r}")

    m, n = problem.n_rows, problem.n_vars
    A, b, c, lo, hi = _standard_form(problem)
    N = n + m
    x = np.zeros(N)
    x[:n] = np.where(np.isfinite(lo[:n]), lo[:n], np.where(np.isfinite(hi[:n]), hi[:n], 0.0))
    resid = b - A[:, :n] @ x[:n]
    slack_val = np.clip(resid, lo[n:], hi[n:])
    gap = resid - slack_val
    need = np.abs(gap) > feas_tol
    art_rows = np.flatnonzero(need)
    k = art_rows.size

    basis = np.arange(n, n + m)
    x[n:] = slack_val
    if k:
        art = np.zeros((m, k))
        art[art_rows, np.arange(k)] = np.sign(gap[art_rows])
        A = np.hstack([A, art])
        lo = np.concatenate([lo, np.zeros(k)])
        hi = np.concatenate([hi, np.full(k, np.inf)])
        c = np.concatenate([c, np.zeros(k)])
        x = np.concatenate([x, np.abs(gap[art_rows])])
        basis[art_rows] = N + np.arange(k)
    if max_iter is None:
        max_iter = 50 * (A.shape[0] + A.shape[1]) + 1000

    core = _Core(A, b, lo, hi, basis, x, feas_tol, opt_tol)
    if k:
        c1 = np.zeros(A.shape[1])
        c1[N:] = 1.0
        status = core.run(c1, max_iter)
        if status == ITERATION_LIMIT:
            return LpSolution(ITERATION_LIMIT, iterations=core.iterations)
        core.refactor()
        infeas = float(core.x[N:].sum())
        scale = max(1.0, float(np.abs(b).max(initial=0.0)))
        if infeas > feas_tol * scale:
            return LpSolution(INFEASIBLE, iterations=core.iterations)
        core.hi[N:] = 0.0
        core.x[N:] = np.clip(core.x[N:], 0.0, 0.0)
        core.refactor()

    status = core.run(c, max_iter)
    core.refactor()
    if status != OPTIMAL:
        return LpSolution(status, iterations=core.iterations)
    xs = core.x[:n].copy()
    # snap tiny bound excursions left by the tolerance-based ratio test
    xs = np.minimum(np.maximum(xs, problem.lb), problem.ub)
    return LpSolution(OPTIMAL, xs, problem.objective_value(xs), core.iterations)
