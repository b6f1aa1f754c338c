"""
Dense two-phase simplex solver with Bland's anti-cycling rule.

Solves  max/min c·α  s.t.  A α ≤ b,  lb ≤ α ≤ ub  (bounds may be infinite).
Problem sizes produced by star sets are small, so the solver favours
deterministic pivoting and guaranteed termination over speed.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple
import logging

import numpy as np

from utils.errors import DimensionMismatchError, LpIterationLimit

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
DEFAULT_MAX_ITER = 50_000


class Sense(str, Enum):
    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LinearProgram:
    objective: np.ndarray
    sense: Sense
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        objective = np.asarray(self.objective, dtype=np.float64).reshape(-1)
        m = objective.shape[0]
        A = np.asarray(self.A, dtype=np.float64).reshape(-1, m) if np.size(self.A) else np.zeros((0, m))
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        lb = np.asarray(self.lb, dtype=np.float64).reshape(-1)
        ub = np.asarray(self.ub, dtype=np.float64).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise DimensionMismatchError(f"{A.shape[0]} constraint rows but {b.shape[0]} right-hand sides")
        if lb.shape[0] != m or ub.shape[0] != m:
            raise DimensionMismatchError(f"bounds must have length {m}")
        both = np.isfinite(lb) & np.isfinite(ub)
        if np.any(lb[both] > ub[both]):
            raise ValueError("variable lower bound exceeds upper bound")
        if np.any(lb == np.inf) or np.any(ub == -np.inf):
            raise ValueError("lower bounds cannot be +inf and upper bounds cannot be -inf")
        object.__setattr__(self, "objective", objective)
        object.__setattr__(self, "sense", Sense(self.sense))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def num_vars(self) -> int:
        return self.objective.shape[0]


@dataclass(frozen=True)
class LpOutcome:
    status: LpStatus
    value: Optional[float] = None
    point: Optional[np.ndarray] = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == LpStatus.OPTIMAL


class SimplexSolver:
    """Holds tolerances and the pivot budget; no state survives between solves"""

    def __init__(self, max_iter: int = DEFAULT_MAX_ITER, pivot_tol: float = PIVOT_TOL,
                 feas_tol: float = FEAS_TOL):
        self.max_iter = max_iter
        self.pivot_tol = pivot_tol
        self.feas_tol = feas_tol

    def solve(self, lp: LinearProgram) -> LpOutcome:
        # internally everything is a minimization
        cost = lp.objective.copy() if lp.sense == Sense.MINIMIZE else -lp.objective
        fixed, unbounded_direction = self._presolve(lp, cost)
        keep = np.isnan(fixed)
        A_keep = lp.A[:, keep]
        b_keep = lp.b - lp.A[:, ~keep] @ fixed[~keep]

        # substitute kept variables by non-negative standard variables: α = shift + T x
        kept = np.flatnonzero(keep)
        shift = np.zeros(kept.size)
        columns = []
        upper_rows = []
        for position, j in enumerate(kept):
            lo, hi = lp.lb[j], lp.ub[j]
            if np.isfinite(lo):
                shift[position] = lo
                columns.append((position, 1.0))
                if np.isfinite(hi):
                    upper_rows.append((len(columns) - 1, hi - lo))
            elif np.isfinite(hi):
                shift[position] = hi
                columns.append((position, -1.0))
            else:
                columns.append((position, 1.0))
                columns.append((position, -1.0))
        T = np.zeros((kept.size, len(columns)))
        for k, (position, sign) in enumerate(columns):
            T[position, k] = sign

        M = A_keep @ T
        h = b_keep - A_keep @ shift
        if upper_rows:
            bound_rows = np.zeros((len(upper_rows), len(columns)))
            for r, (k, width) in enumerate(upper_rows):
                bound_rows[r, k] = 1.0
            M = np.vstack([M, bound_rows])
            h = np.concatenate([h, [width for _, width in upper_rows]])
        g = (cost[keep] @ T) if kept.size else np.zeros(0)
        if unbounded_direction:
            g = np.zeros_like(g)

        status, x, iterations = self._standard_form(g, M, h)
        if status == LpStatus.INFEASIBLE:
            return LpOutcome(status=LpStatus.INFEASIBLE, iterations=iterations)
        if status == LpStatus.UNBOUNDED or unbounded_direction:
            return LpOutcome(status=LpStatus.UNBOUNDED, iterations=iterations)

        point = fixed.copy()
        point[keep] = shift + T @ x
        point = np.clip(point, lp.lb, lp.ub)
        value = float(lp.objective @ point)
        return LpOutcome(status=LpStatus.OPTIMAL, value=value, point=point, iterations=iterations)

    def _presolve(self, lp: LinearProgram, cost: np.ndarray) -> Tuple[np.ndarray, bool]:
        """Fix variables that are pinned by their bounds or absent from every row"""
        m = lp.num_vars
        fixed = np.full(m, np.nan)
        in_rows = np.any(lp.A != 0.0, axis=0) if lp.A.shape[0] else np.zeros(m, dtype=bool)
        unbounded_direction = False
        for j in range(m):
            lo, hi = lp.lb[j], lp.ub[j]
            if lo == hi:
                fixed[j] = lo
                continue
            if in_rows[j]:
                continue
            fallback = lo if np.isfinite(lo) else (hi if np.isfinite(hi) else 0.0)
            if cost[j] > 0.0:
                fixed[j] = lo if np.isfinite(lo) else fallback
                unbounded_direction |= not np.isfinite(lo)
            elif cost[j] < 0.0:
                fixed[j] = hi if np.isfinite(hi) else fallback
                unbounded_direction |= not np.isfinite(hi)
            else:
                fixed[j] = fallback
        return fixed, unbounded_direction

    def _standard_form(self, g: np.ndarray, M: np.ndarray, h: np.ndarray) -> Tuple[LpStatus, np.ndarray, int]:
        """min g·x  s.t.  M x ≤ h,  x ≥ 0"""
        rows, n = M.shape
        negative = h < 0
        num_art = int(negative.sum())
        width = n + rows + num_art
        tableau = np.zeros((rows, width + 1))
        basis = np.empty(rows, dtype=np.int64)
        art = n + rows
        for i in range(rows):
            sign = -1.0 if negative[i] else 1.0
            tableau[i, :n] = sign * M[i]
            tableau[i, n + i] = sign
            tableau[i, -1] = sign * h[i]
            if negative[i]:
                tableau[i, art] = 1.0
                basis[i] = art
                art += 1
            else:
                basis[i] = n + i
        iterations = 0

        if num_art:
            phase_one = np.zeros(width + 1)
            phase_one[n + rows:width] = 1.0
            for i in range(rows):
                if basis[i] >= n + rows:
                    phase_one -= tableau[i]
            status, iterations = self._iterate(tableau, phase_one, basis, width, iterations)
            if -phase_one[-1] > self.feas_tol:
                return LpStatus.INFEASIBLE, np.zeros(n), iterations
            tableau, basis = self._drop_artificials(tableau, basis, n + rows)
            width = n + rows

        objective = np.zeros(width + 1)
        objective[:n] = g
        for i in range(tableau.shape[0]):
            objective -= objective[basis[i]] * tableau[i] if basis[i] < n else 0.0
        status, iterations = self._iterate(tableau, objective, basis, width, iterations)
        x = np.zeros(n)
        for i in range(tableau.shape[0]):
            if basis[i] < n:
                x[basis[i]] = max(tableau[i, -1], 0.0)
        return status, x, iterations

    def _iterate(self, tableau: np.ndarray, objective: np.ndarray, basis: np.ndarray,
                 width: int, iterations: int) -> Tuple[LpStatus, int]:
        while True:
            # Bland: lowest-index improving column enters
            improving = np.flatnonzero(objective[:width] < -self.pivot_tol)
            if improving.size == 0:
                return LpStatus.OPTIMAL, iterations
            j = int(improving[0])
            column = tableau[:, j]
            candidates = np.flatnonzero(column > self.pivot_tol)
            if candidates.size == 0:
                return LpStatus.UNBOUNDED, iterations
            ratios = tableau[candidates, -1] / column[candidates]
            best = ratios.min()
            tied = candidates[ratios <= best + 1e-12 * max(1.0, abs(best))]
            # ties leave by lowest basic variable index
            i = int(tied[np.argmin(basis[tied])])
            iterations += 1
            if iterations > self.max_iter:
                raise LpIterationLimit(f"simplex exceeded {self.max_iter} pivots")
            self._pivot(tableau, objective, basis, i, j)

    @staticmethod
    def _pivot(tableau: np.ndarray, objective: np.ndarray, basis: np.ndarray, i: int, j: int) -> None:
        tableau[i] /= tableau[i, j]
        column = tableau[:, j].copy()
        column[i] = 0.0
        tableau -= np.outer(column, tableau[i])
        tableau[:, j] = 0.0
        tableau[i, j] = 1.0
        objective -= objective[j] * tableau[i]
        objective[j] = 0.0
        basis[i] = j

    def _drop_artificials(self, tableau: np.ndarray, basis: np.ndarray, first_art: int):
        keep_rows = []
        scratch = np.zeros(tableau.shape[1])
        for i in range(tableau.shape[0]):
            if basis[i] >= first_art:
                candidates = np.flatnonzero(np.abs(tableau[i, :first_art]) > self.pivot_tol)
                if candidates.size == 0:
                    # redundant row
                    continue
                self._pivot(tableau, scratch, basis, i, int(candidates[0]))
            keep_rows.append(i)
        tableau = np.hstack([tableau[keep_rows, :first_art], tableau[keep_rows, -1:]])
        return tableau, basis[keep_rows].copy()


# Global solver instance
default_solver = SimplexSolver()


def solve(lp: LinearProgram, solver: Optional[SimplexSolver] = None) -> LpOutcome:
    return (solver or default_solver).solve(lp)


def optimize(objective, sense: Sense, A, b, lb, ub, solver: Optional[SimplexSolver] = None) -> LpOutcome:
    return solve(LinearProgram(objective=objective, sense=sense, A=A, b=b, lb=lb, ub=ub), solver)


def is_feasible(A, b, lb, ub, solver: Optional[SimplexSolver] = None) -> bool:
    lb = np.asarray(lb, dtype=np.float64)
    outcome = optimize(np.zeros(lb.shape[0]), Sense.MINIMIZE, A, b, lb, ub, solver)
    return outcome.status != LpStatus.INFEASIBLE
