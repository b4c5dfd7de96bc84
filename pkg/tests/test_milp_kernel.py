import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evreserve.milp_kernel import (INFEASIBLE, OPTIMAL, UNBOUNDED, GAP_LIMIT, LpProblem, dumps,
                                   loads, solve_lp, solve_milp)

from oracles import enumerate_milp


def dense(c, A, senses, rhs, lb=0.0, ub=np.inf, integ=None, maximize=False, offset=0.0):
    A = np.asarray(A, dtype=float)
    r, k = np.nonzero(A)
    return LpProblem(c, r, k, A[r, k], senses, rhs, lb, ub, integ, maximize, offset)


def vertex_enumeration(c, A, b):
    """max c.x over {A x <= b, x >= 0} in 2-D by intersecting every pair of lines."""
    A = np.vstack([A, -np.eye(2)])
    b = np.concatenate([b, [0, 0]])
    best, arg = -math.inf, None
    for i, j in itertools.combinations(range(len(b)), 2):
        M = A[[i, j]]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, b[[i, j]])
        if np.all(A @ x <= b + 1e-9) and c @ x > best:
            best, arg = float(c @ x), x
    return best, arg


# --- LP -------------------------------------------------------------------

def test_lp_box():
    p = dense([1, 1], [[1, 0], [0, 1]], ["L", "L"], [1, 2], maximize=True)
    sol = solve_lp(p)
    assert sol.status == OPTIMAL and sol.objective == pytest.approx(3.0)
    np.testing.assert_allclose(sol.x, [1, 2])


def test_lp_unbounded():
    p = dense([1], [[1]], ["G"], [0], maximize=True)
    assert solve_lp(p).status == UNBOUNDED


def test_lp_vertex_oracle():
    c, A, b = np.array([3.0, 2.0]), np.array([[1.0, 1.0], [1.0, 0.0]]), np.array([4.0, 2.0])
    best, arg = vertex_enumeration(c, A, b)
    assert (best, tuple(arg)) == (10.0, (2.0, 2.0))
    sol = solve_lp(dense(c, A, ["L", "L"], b, maximize=True))
    assert sol.objective == pytest.approx(best)
    np.testing.assert_allclose(sol.x, arg, atol=1e-9)


def test_lp_infeasible():
    p = dense([1, 1], [[1, 1], [1, 1]], ["L", "G"], [1, 2])
    assert solve_lp(p).status == INFEASIBLE


def test_lp_degenerate_cycling_example():
    # Beale's example cycles under the textbook largest-coefficient rule
    c = [-0.75, 150, -0.02, 6]
    A = [[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]]
    sol = solve_lp(dense(c, A, ["L", "L", "L"], [0, 0, 1]))
    assert sol.status == OPTIMAL and sol.objective == pytest.approx(-0.05)


def test_lp_equality_and_free_variables():
    p = dense([1, 2, 0], [[1, 1, 1], [1, -1, 0]], ["E", "E"], [3, 1], lb=[-np.inf, -np.inf, 0],
              ub=[np.inf, np.inf, 10])
    sol = solve_lp(p)
    ref = solve_lp(p, engine="highs")
    assert sol.status == ref.status == OPTIMAL
    assert sol.objective == pytest.approx(ref.objective)


def random_lp(rng, m, n, integer=False):
    A = rng.normal(size=(m, n)) * (rng.random((m, n)) < 0.7)
    x0 = rng.uniform(0, 3, n)
    senses = rng.choice(["L", "G", "E"], size=m, p=[.5, .35, .15])
    rhs = A @ x0 + np.where(senses == "L", 1.0, np.where(senses == "G", -1.0, 0.0))
    c = rng.normal(size=n)
    ub = rng.uniform(3, 6, n)
    integ = None
    if integer:
        integ = np.zeros(n, dtype=bool)
        integ[: max(1, n // 2)] = True
        ub[integ] = 1.0
        lb = np.zeros(n)
        # keep feasibility: make binaries 0 part of a feasible point
        x0[integ] = 0
        rhs = A @ x0 + np.where(senses == "L", 1.0, np.where(senses == "G", -1.0, 0.0))
    return dense(c, A, senses, rhs, 0.0, ub, integ)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8), st.integers(1, 8))
def test_simplex_matches_highs(seed, m, n):
    p = random_lp(np.random.default_rng(seed), m, n)
    a, b = solve_lp(p), solve_lp(p, engine="highs")
    assert a.status == b.status
    if a.status == OPTIMAL:
        assert a.objective == pytest.approx(b.objective, rel=1e-7, abs=1e-7)
        assert p.max_violation(a.x) <= 1e-7


# --- MILP -------------------------------------------------------------------

def test_knapsack():
    p = dense([5, 4], [[3, 2]], ["L"], [3], 0, 1, [True, True], maximize=True)
    sol = solve_milp(p)
    assert sol.status == OPTIMAL and sol.objective == pytest.approx(5.0)
    np.testing.assert_allclose(sol.x, [1, 0])
    brute = max(5 * a + 4 * b for a in (0, 1) for b in (0, 1) if 3 * a + 2 * b <= 3)
    assert sol.objective == brute


def test_integral_root_one_node():
    p = dense([-1, -1], [[1, 0], [0, 1]], ["L", "L"], [1, 1], 0, 1, [True, True])
    sol = solve_milp(p)
    assert sol.status == OPTIMAL and sol.nodes == 1 and sol.objective == -2


def test_infeasible_integer():
    p = dense([0, 0], [[1, 1]], ["E"], [1.5], 0, 1, [True, True])
    assert solve_milp(p).status == INFEASIBLE


def test_node_limit_reports_incumbent_and_bound():
    rng = np.random.default_rng(11)
    n = 14
    w = rng.integers(5, 40, n).astype(float)
    v = w + rng.integers(0, 6, n)
    p = dense(v, [w], ["L"], [w.sum() / 2 + 0.5], 0, 1, np.ones(n, bool), maximize=True)
    sol = solve_milp(p, node_limit=3, rounding_heuristic=False)
    assert sol.status in (GAP_LIMIT, OPTIMAL)
    if sol.x is not None:
        assert sol.objective <= sol.bound + 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(2, 8))
def test_bnb_matches_enumeration(seed, m, n):
    p = random_lp(np.random.default_rng(seed), m, n, integer=True)
    sol = solve_milp(p)
    ref = enumerate_milp(p)
    if math.isinf(ref):
        assert sol.status == INFEASIBLE
    else:
        assert sol.status == OPTIMAL
        assert sol.objective == pytest.approx(ref, rel=1e-6, abs=1e-6)
        ints = p.integrality
        assert np.all(np.abs(sol.x[ints] - np.round(sol.x[ints])) <= 1e-6)
        # weak duality audit (minimisation: bound <= incumbent)
        assert sol.bound <= sol.objective + 1e-6 * max(1, abs(sol.objective))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_bnb_deterministic(seed):
    p = random_lp(np.random.default_rng(seed), 5, 8, integer=True)
    a, b = solve_milp(p), solve_milp(p)
    assert a.status == b.status and a.nodes == b.nodes
    if a.x is not None:
        np.testing.assert_array_equal(a.x, b.x)


# --- LP text format ---------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_lp_format_roundtrip(seed):
    rng = np.random.default_rng(seed)
    p = random_lp(rng, 4, 5, integer=bool(seed % 2))
    p.lb[0] = -np.inf
    p.obj_offset = float(rng.normal())
    q = loads(dumps(p))
    np.testing.assert_array_equal(q.c, p.c)
    np.testing.assert_array_equal(q.matrix().toarray(), p.matrix().toarray())
    np.testing.assert_array_equal(q.rhs, p.rhs)
    np.testing.assert_array_equal(q.senses, p.senses)
    np.testing.assert_array_equal(q.lb, p.lb)
    np.testing.assert_array_equal(q.ub, p.ub)
    np.testing.assert_array_equal(q.integrality, p.integrality)
    assert q.obj_offset == p.obj_offset and q.maximize == p.maximize


def test_lp_format_text():
    p = dense([1, -2], [[1, 1]], ["G"], [1], 0, [1, np.inf], [True, False])
    text = dumps(p)
    assert "Minimize" in text and "Subject To" in text and "Binaries" in text
    assert " c0: + 1.0 x0 + 1.0 x1 >= 1.0" in text
    assert solve_milp(loads(text)).status == UNBOUNDED
