"""
Tests for the bounded simplex solver
"""

import itertools
import os
import sys

import numpy as np
import pytest

# Add the project root to the Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from utils.errors import LpIterationLimit
from utils.lp_solver import LinearProgram, LpStatus, Sense, SimplexSolver, is_feasible, optimize, solve

INF = np.inf


def test_bound_attained():
    outcome = optimize([1.0], Sense.MAXIMIZE, [[1.0]], [1.0], [-1.0], [1.0])
    assert outcome.status == LpStatus.OPTIMAL
    assert outcome.value == pytest.approx(1.0, abs=1e-9)


def test_contradictory_bounds_infeasible():
    outcome = optimize([1.0], Sense.MAXIMIZE, [[1.0]], [-2.0], [0.0], [INF])
    assert outcome.status == LpStatus.INFEASIBLE
    assert not is_feasible([[1.0]], [-2.0], [0.0], [INF])


def test_unbounded():
    outcome = optimize([1.0, 1.0], Sense.MAXIMIZE, [[1.0, -1.0]], [1.0], [0.0, 0.0], [INF, INF])
    assert outcome.status == LpStatus.UNBOUNDED


def test_free_variables():
    # min x + y  s.t.  -x - y <= -3, x - y <= 1, free bounds
    outcome = optimize([1.0, 1.0], Sense.MINIMIZE, [[-1.0, -1.0], [1.0, -1.0]], [-3.0, 1.0],
                       [-INF, -INF], [INF, INF])
    assert outcome.status == LpStatus.OPTIMAL
    assert outcome.value == pytest.approx(3.0, abs=1e-9)


def test_fixed_and_unconstrained_variables():
    # x1 pinned at 2, x2 appears in no row and is pushed to its best bound
    outcome = optimize([1.0, -1.0, 1.0], Sense.MAXIMIZE, [[0.0, 0.0, 1.0]], [0.5],
                       [2.0, -3.0, -1.0], [2.0, 4.0, 1.0])
    assert outcome.status == LpStatus.OPTIMAL
    assert outcome.point.tolist() == pytest.approx([2.0, -3.0, 0.5])
    assert outcome.value == pytest.approx(5.5)


def test_no_rows_box_only():
    outcome = optimize([1.0, -2.0], Sense.MINIMIZE, np.zeros((0, 2)), [], [-1.0, -1.0], [1.0, 1.0])
    assert outcome.value == pytest.approx(-3.0)


def test_invalid_bounds_rejected():
    with pytest.raises(ValueError):
        LinearProgram(objective=[1.0], sense=Sense.MAXIMIZE, A=[[1.0]], b=[1.0], lb=[2.0], ub=[1.0])


def test_iteration_budget_is_distinct():
    solver = SimplexSolver(max_iter=1)
    A = [[1.0, 1.0, 1.0], [1.0, -1.0, 0.0], [0.0, 1.0, -1.0]]
    with pytest.raises(LpIterationLimit):
        optimize([1.0, 2.0, 3.0], Sense.MAXIMIZE, A, [3.0, 0.5, 0.5], [0.0] * 3, [INF] * 3, solver)


def test_repeated_solves_agree_exactly():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(5, 3))
    b = rng.uniform(0.5, 2.0, size=5)
    c = rng.normal(size=3)
    first = optimize(c, Sense.MAXIMIZE, A, b, [-1.0] * 3, [1.0] * 3)
    second = optimize(c, Sense.MAXIMIZE, A, b, [-1.0] * 3, [1.0] * 3)
    assert first.value == second.value
    assert np.array_equal(first.point, second.point)


def _vertex_max(c, A, b):
    """Brute force over every vertex of {A x <= b, -1 <= x <= 1}"""
    rows = np.vstack([A, np.eye(3), -np.eye(3)])
    rhs = np.concatenate([b, np.ones(3), np.ones(3)])
    best = -INF
    for active in itertools.combinations(range(rows.shape[0]), 3):
        sub = rows[list(active)]
        if abs(np.linalg.det(sub)) < 1e-10:
            continue
        point = np.linalg.solve(sub, rhs[list(active)])
        if np.all(rows @ point <= rhs + 1e-9):
            best = max(best, float(c @ point))
    return best


def _grid_max(c, A, b, step=0.05):
    axis = np.arange(-1.0, 1.0 + step / 2, step)
    points = np.array(list(itertools.product(axis, axis, axis)))
    feasible = points[np.all(points @ A.T <= b + 1e-12, axis=1)]
    return float(np.max(feasible @ c))


def test_random_lps_match_brute_force():
    """3-variable box LPs against vertex enumeration and a grid search"""
    rng = np.random.default_rng(8)
    for _ in range(25):
        A = rng.normal(size=(3, 3))
        b = rng.uniform(0.2, 1.0, size=3)
        c = rng.normal(size=3)
        outcome = optimize(c, Sense.MAXIMIZE, A, b, [-1.0] * 3, [1.0] * 3)
        assert outcome.status == LpStatus.OPTIMAL
        assert outcome.value == pytest.approx(_vertex_max(c, A, b), abs=1e-7)
        assert outcome.value >= _grid_max(c, A, b) - 1e-9


def test_optimal_point_is_feasible():
    rng = np.random.default_rng(12)
    for _ in range(30):
        m = int(rng.integers(2, 6))
        A = rng.normal(size=(m + 2, m))
        b = rng.uniform(0.0, 1.0, size=m + 2)
        c = rng.normal(size=m)
        lp = LinearProgram(objective=c, sense=Sense.MAXIMIZE, A=A, b=b, lb=-np.ones(m), ub=np.ones(m))
        outcome = solve(lp)
        assert outcome.status == LpStatus.OPTIMAL
        assert np.all(A @ outcome.point <= b + 1e-7)
        assert np.all(outcome.point >= -1 - 1e-7) and np.all(outcome.point <= 1 + 1e-7)
        assert outcome.value == pytest.approx(float(c @ outcome.point), abs=1e-7)


def test_duality_sanity():
    rng = np.random.default_rng(21)
    for _ in range(20):
        A = rng.normal(size=(4, 3))
        b = rng.uniform(0.1, 1.0, size=4)
        c = rng.normal(size=3)
        high = optimize(c, Sense.MAXIMIZE, A, b, [-2.0] * 3, [2.0] * 3)
        low = optimize(-c, Sense.MINIMIZE, A, b, [-2.0] * 3, [2.0] * 3)
        assert high.value == pytest.approx(-low.value, abs=1e-7)


def test_adding_constraint_keeps_infeasible():
    A = [[1.0, 1.0], [-1.0, -1.0]]
    b = [1.0, -3.0]
    assert not is_feasible(A, b, [0.0, 0.0], [5.0, 5.0])
    assert not is_feasible(A + [[1.0, 0.0]], b + [0.5], [0.0, 0.0], [5.0, 5.0])
