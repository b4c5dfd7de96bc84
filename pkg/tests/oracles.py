"""Independent reference computations used to freeze and cross-check values.

These deliberately avoid the package's own helpers: scalar loops instead of
vectorised slices, exhaustive enumeration instead of branch-and-bound,
brute-force minimisation instead of closed forms.
"""

import itertools
import math

import numpy as np
from scipy.optimize import linprog

from evreserve.aggregation import Inflexible


def _cover(lo, hi, k):
    return min(max(min(k + 1.0, hi) - max(float(k), lo), 0.0), 1.0)


def ref_boundaries(win, n, dt):
    """Scalar per-instant ``(u, l)`` and per-settlement ``pb`` of one flexible window."""
    rate = win.eta * win.p_max * dt
    u, l, pb = [0.0] * n, [0.0] * n, [0.0] * n
    for k in range(n):
        if k <= win.t_a:
            uk = lk = 0.0
        elif k > win.t_flex_end:
            uk = lk = win.flex_energy_kwh
        else:
            since = k - win.t_a
            uk = min(rate * since, win.flex_energy_kwh)
            lk = max(max(win.e_floor_rel_kwh, -win.p_max * dt * since),
                     win.flex_energy_kwh - rate * (win.t_flex_end - k))
            lk = min(lk, uk)
        u[k], l[k] = uk, lk
        pb[k] = win.p_max * _cover(win.t_a, win.t_flex_end, k)
    return u, l, pb


def brute_envelope(windows, n, dt):
    """Window-by-window scalar sums of the individual boundaries."""
    eu, el, pb, tail, nc = [0.0] * n, [0.0] * n, [0.0] * n, [0.0] * n, [0] * n
    for win in windows:
        if isinstance(win, Inflexible):
            for k in range(n):
                tail[k] += win.p_max * _cover(win.t_a, win.t_end, k)
            continue
        u, l, p = ref_boundaries(win, n, dt)
        for k in range(n):
            eu[k] += u[k]
            el[k] += l[k]
            pb[k] += p[k]
            nc[k] += int(_cover(win.t_a, win.t_flex_end, k) > 0)
            if win.t_d > win.t_flex_end:
                tail[k] += win.p_max / 2.0 * _cover(win.t_flex_end, win.t_d, k)
    return [np.array(a) for a in (eu, el, pb, tail, nc)]


def ru_cvar(losses, probs, alpha):
    """Minimise the Rockafellar-Uryasev function over every candidate threshold."""
    best = math.inf
    arg = None
    for v in sorted(set(float(x) for x in losses)):
        f = v + sum(p * max(x - v, 0.0) for x, p in zip(losses, probs)) / alpha
        if f < best - 1e-15:
            best, arg = f, v
    return arg, best


def band_mean(lo_p, hi_p, points=1_000_000):
    """Conditional mean of a standard normal between two quantiles by midpoint quadrature."""
    from scipy.stats import norm

    a = norm.ppf(lo_p) if lo_p > 0 else -12.0
    b = norm.ppf(hi_p) if hi_p < 1 else 12.0
    h = (b - a) / points
    x = a + h * (np.arange(points) + 0.5)
    dens = np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    return float(np.sum(x * dens) * h / (np.sum(dens) * h))


def lp_value(problem, lb, ub):
    """HiGHS optimum of ``problem`` with replaced bounds (``inf`` if infeasible)."""
    A = problem.matrix().toarray()
    ub_rows, ub_rhs, eq_rows, eq_rhs = [], [], [], []
    for i, s in enumerate(problem.senses):
        if s == "L":
            ub_rows.append(A[i]); ub_rhs.append(problem.rhs[i])
        elif s == "G":
            ub_rows.append(-A[i]); ub_rhs.append(-problem.rhs[i])
        else:
            eq_rows.append(A[i]); eq_rhs.append(problem.rhs[i])
    c = -problem.c if problem.maximize else problem.c
    res = linprog(c, A_ub=np.array(ub_rows) if ub_rows else None, b_ub=ub_rhs or None,
                  A_eq=np.array(eq_rows) if eq_rows else None, b_eq=eq_rhs or None,
                  bounds=list(zip(lb, ub)), method="highs")
    if res.status != 0:
        return math.inf
    val = float(res.fun) + (-problem.obj_offset if problem.maximize else problem.obj_offset)
    return val


def enumerate_milp(problem):
    """Best objective over every binary assignment (minimisation sense)."""
    ints = np.flatnonzero(problem.integrality)
    best = math.inf
    for bits in itertools.product((0.0, 1.0), repeat=ints.size):
        lb, ub = problem.lb.copy(), problem.ub.copy()
        lb[ints] = bits
        ub[ints] = bits
        best = min(best, lp_value(problem, lb, ub))
    return -best if problem.maximize else best
