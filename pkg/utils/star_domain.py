"""
Star-set and zonotope reachability for feed-forward ReLU networks.

A star is {c + Vα : Cα ≤ d, plb ≤ α ≤ pub}. Affine layers map stars exactly;
ReLU layers are handled by exact splitting, by the triangle relaxation with LP
bounds (approx) or by the relax variant that LP-refines only part of the
unstable neurons.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple
import logging
import math
import time

import numpy as np

from utils.errors import (
    DimensionMismatchError, InfeasibleStarError, ReachTimeout, StarBudgetExceeded,
)
from utils.lp_solver import LpStatus, Sense, SimplexSolver, is_feasible, optimize
from utils.network import AffineLayer, Network

logger = logging.getLogger(__name__)

DEFAULT_MAX_STARS = 10_000


class BoundMode(str, Enum):
    ESTIMATE = "estimate"
    LP = "lp"


class NeuronStatus(str, Enum):
    STABLE_POSITIVE = "stable_positive"
    STABLE_NEGATIVE = "stable_negative"
    UNSTABLE = "unstable"


@dataclass(frozen=True)
class NeuronBounds:
    lower: float
    upper: float

    @property
    def status(self) -> NeuronStatus:
        if self.lower >= 0.0:
            return NeuronStatus.STABLE_POSITIVE
        if self.upper <= 0.0:
            return NeuronStatus.STABLE_NEGATIVE
        return NeuronStatus.UNSTABLE


class ReachMethod(str, Enum):
    EXACT = "exact"
    APPROX = "approx"
    RELAX = "relax"


@dataclass(frozen=True)
class Method:
    """Reachability method; factor only matters for relax"""
    kind: ReachMethod
    factor: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ReachMethod(self.kind))
        if not 0.0 <= self.factor <= 1.0:
            raise ValueError(f"relax factor must lie in [0, 1], got {self.factor}")

    @classmethod
    def exact(cls) -> "Method":
        return cls(ReachMethod.EXACT)

    @classmethod
    def approx(cls) -> "Method":
        return cls(ReachMethod.APPROX)

    @classmethod
    def relax(cls, factor: float) -> "Method":
        return cls(ReachMethod.RELAX, factor)


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class StarSet:
    center: np.ndarray
    basis: np.ndarray
    C: np.ndarray
    d: np.ndarray
    plb: np.ndarray
    pub: np.ndarray

    def __post_init__(self):
        center = np.array(self.center, dtype=np.float64).reshape(-1)
        basis = np.array(self.basis, dtype=np.float64).reshape(center.shape[0], -1)
        m = basis.shape[1]
        C = np.array(self.C, dtype=np.float64).reshape(-1, m) if np.size(self.C) else np.zeros((0, m))
        d = np.array(self.d, dtype=np.float64).reshape(-1)
        plb = np.array(self.plb, dtype=np.float64).reshape(-1)
        pub = np.array(self.pub, dtype=np.float64).reshape(-1)
        if C.shape[0] != d.shape[0]:
            raise DimensionMismatchError(f"{C.shape[0]} constraint rows, {d.shape[0]} right-hand sides")
        if plb.shape[0] != m or pub.shape[0] != m:
            raise DimensionMismatchError(f"predicate bounds must have length {m}")
        for name, value in (("center", center), ("basis", basis), ("C", C), ("d", d), ("plb", plb), ("pub", pub)):
            object.__setattr__(self, name, _readonly(value))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def num_pred(self) -> int:
        return self.basis.shape[1]

    def is_empty(self, solver: Optional[SimplexSolver] = None) -> bool:
        if self.C.shape[0] == 0:
            return bool(np.any(self.plb > self.pub))
        return not is_feasible(self.C, self.d, self.plb, self.pub, solver)

    def point(self, alpha: np.ndarray) -> np.ndarray:
        return self.center + self.basis @ alpha

    def estimate_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Interval bounds of every dimension from predicate bounds alone"""
        positive = np.maximum(self.basis, 0.0)
        negative = np.minimum(self.basis, 0.0)
        lower = self.center + positive @ self.plb + negative @ self.pub
        upper = self.center + positive @ self.pub + negative @ self.plb
        return lower, upper

    def optimize_direction(self, direction: np.ndarray, offset: float, sense: Sense,
                           solver: Optional[SimplexSolver] = None) -> Tuple[float, np.ndarray]:
        """Optimize offset + direction·α over the predicate; returns (value, α)"""
        if self.C.shape[0] == 0:
            # box predicate: the optimum sits on a corner
            take_upper = direction > 0 if sense == Sense.MAXIMIZE else direction < 0
            alpha = np.where(take_upper, self.pub, self.plb)
            return float(offset + direction @ alpha), alpha
        outcome = optimize(direction, sense, self.C, self.d, self.plb, self.pub, solver)
        if outcome.status == LpStatus.INFEASIBLE:
            raise InfeasibleStarError("star predicate is empty")
        if outcome.status != LpStatus.OPTIMAL:
            raise InfeasibleStarError(f"bound query ended {outcome.status.value}")
        return float(offset + outcome.value), outcome.point

    def contains(self, x: np.ndarray, tol: float = 1e-7, solver: Optional[SimplexSolver] = None) -> bool:
        """Membership: some α in the predicate maps to x (within tol per dim)"""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise DimensionMismatchError(f"point has shape {x.shape}, star has dim {self.dim}")
        A = np.vstack([self.C, self.basis, -self.basis])
        b = np.concatenate([self.d, x - self.center + tol, self.center - x + tol])
        return is_feasible(A, b, self.plb, self.pub, solver)

    def sample(self, rng: np.random.Generator, count: int, max_tries: int = 100) -> np.ndarray:
        """Uniform predicate samples mapped to points; rejection on C rows"""
        found = []
        for _ in range(max_tries):
            alphas = self.plb + (self.pub - self.plb) * rng.random((count, self.num_pred))
            if self.C.shape[0]:
                alphas = alphas[np.all(alphas @ self.C.T <= self.d + 1e-12, axis=1)]
            found.extend(self.center + alphas @ self.basis.T)
            if len(found) >= count:
                break
        return np.array(found[:count]).reshape(-1, self.dim)


@dataclass(frozen=True)
class Zonotope:
    center: np.ndarray
    generators: np.ndarray

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        radius = np.abs(self.generators).sum(axis=1)
        return self.center - radius, self.center + radius


@dataclass(frozen=True)
class LayerBounds:
    """Sound per-neuron bounds for one vector of network values"""
    lower: np.ndarray
    upper: np.ndarray

    def neurons(self) -> List[NeuronBounds]:
        return [NeuronBounds(float(lo), float(hi)) for lo, hi in zip(self.lower, self.upper)]


def from_box(lb: Sequence[float], ub: Sequence[float]) -> StarSet:
    """Star equal to the box [lb, ub]"""
    lb = np.asarray(lb, dtype=np.float64)
    ub = np.asarray(ub, dtype=np.float64)
    if lb.shape != ub.shape or lb.ndim != 1:
        raise DimensionMismatchError(f"box bounds have shapes {lb.shape} and {ub.shape}")
    if np.any(lb > ub):
        bad = int(np.flatnonzero(lb > ub)[0])
        raise ValueError(f"lower bound exceeds upper bound in dimension {bad}")
    n = lb.shape[0]
    return StarSet(
        center=(lb + ub) / 2.0,
        basis=np.diag((ub - lb) / 2.0),
        C=np.zeros((0, n)),
        d=np.zeros(0),
        plb=-np.ones(n),
        pub=np.ones(n),
    )


def affine_map(s: StarSet, W: np.ndarray, b: np.ndarray) -> StarSet:
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] != s.dim or b.shape != (W.shape[0],):
        raise DimensionMismatchError(f"affine map {W.shape}/{b.shape} does not fit star of dim {s.dim}")
    return StarSet(center=W @ s.center + b, basis=W @ s.basis, C=s.C, d=s.d, plb=s.plb, pub=s.pub)


def dim_bounds(s: StarSet, i: int, mode: BoundMode = BoundMode.LP,
               solver: Optional[SimplexSolver] = None) -> NeuronBounds:
    if not 0 <= i < s.dim:
        raise DimensionMismatchError(f"dimension {i} outside star of dim {s.dim}")
    if BoundMode(mode) == BoundMode.ESTIMATE:
        lower, upper = s.estimate_bounds()
        return NeuronBounds(float(lower[i]), float(upper[i]))
    row = s.basis[i]
    lower, _ = s.optimize_direction(row, s.center[i], Sense.MINIMIZE, solver)
    upper, _ = s.optimize_direction(row, s.center[i], Sense.MAXIMIZE, solver)
    return NeuronBounds(lower, max(upper, lower))


def _zero_dim(s: StarSet, i: int, C: np.ndarray, d: np.ndarray) -> StarSet:
    center = s.center.copy()
    basis = s.basis.copy()
    center[i] = 0.0
    basis[i] = 0.0
    return StarSet(center=center, basis=basis, C=C, d=d, plb=s.plb, pub=s.pub)


def relu_exact_step(s: StarSet, neuron: int, solver: Optional[SimplexSolver] = None) -> List[StarSet]:
    """Exact ReLU on one dimension: at most two stars, empty branches dropped"""
    lower, upper = s.estimate_bounds()
    if lower[neuron] >= 0.0:
        return [s]
    if upper[neuron] <= 0.0:
        return [_zero_dim(s, neuron, s.C, s.d)]
    row = s.basis[neuron]
    # x_i >= 0  <=>  -V_i α <= c_i
    C_pos = np.vstack([s.C, -row])
    d_pos = np.concatenate([s.d, [s.center[neuron]]])
    # x_i <= 0  <=>  V_i α <= -c_i
    C_neg = np.vstack([s.C, row])
    d_neg = np.concatenate([s.d, [-s.center[neuron]]])
    branches = []
    if is_feasible(C_pos, d_pos, s.plb, s.pub, solver):
        branches.append(StarSet(center=s.center, basis=s.basis, C=C_pos, d=d_pos, plb=s.plb, pub=s.pub))
    if is_feasible(C_neg, d_neg, s.plb, s.pub, solver):
        branches.append(_zero_dim(s, neuron, C_neg, d_neg))
    if not branches:
        raise InfeasibleStarError("input star to exact ReLU step is empty")
    return branches


def relu_approx_step(s: StarSet, neuron: int, nb: NeuronBounds) -> StarSet:
    """Triangle relaxation of ReLU on one dimension using the given bounds"""
    l, u = nb.lower, nb.upper
    if l > u:
        raise ValueError(f"inconsistent neuron bounds: lower {l} > upper {u}")
    if nb.status == NeuronStatus.STABLE_POSITIVE:
        return s
    if nb.status == NeuronStatus.STABLE_NEGATIVE:
        return _zero_dim(s, neuron, s.C, s.d)

    m = s.num_pred
    row = s.basis[neuron]
    c_i = s.center[neuron]
    slope = u / (u - l)
    # fresh predicate variable y replaces x_i
    C = np.hstack([s.C, np.zeros((s.C.shape[0], 1))])
    # y >= x_i:  V_i α - y <= -c_i
    lower_row = np.append(row, -1.0)
    # y <= slope (x_i - l):  y - slope V_i α <= slope (c_i - l)
    upper_row = np.append(-slope * row, 1.0)
    C = np.vstack([C, lower_row, upper_row])
    d = np.concatenate([s.d, [-c_i, slope * (c_i - l)]])
    center = s.center.copy()
    center[neuron] = 0.0
    basis = np.hstack([s.basis, np.zeros((s.dim, 1))])
    basis[neuron] = 0.0
    basis[neuron, m] = 1.0
    return StarSet(center=center, basis=basis, C=C, d=d,
                   plb=np.append(s.plb, 0.0), pub=np.append(s.pub, u))


def _check_deadline(deadline: Optional[float]) -> None:
    if deadline is not None and time.monotonic() > deadline:
        raise ReachTimeout("reachability deadline exceeded")


def _layer_bounds(s: StarSet, method: Method, pre: Optional[LayerBounds],
                  solver: Optional[SimplexSolver], deadline: Optional[float]) -> List[NeuronBounds]:
    """Neuron bounds for one ReLU layer under approx / relax"""
    lower, upper = s.estimate_bounds()
    if pre is not None:
        lower = np.maximum(lower, pre.lower)
        upper = np.minimum(upper, pre.upper)
        upper = np.maximum(upper, lower)
    unstable = np.flatnonzero((lower < 0.0) & (upper > 0.0))
    if method.kind == ReachMethod.RELAX:
        # largest estimated triangle area first; stable sort keeps index order on ties
        area = upper[unstable] * (-lower[unstable]) / 2.0
        order = unstable[np.argsort(-area, kind="stable")]
        refine_count = int(math.floor((1.0 - method.factor) * unstable.size + 0.5))
        refined = np.sort(order[:refine_count])
    else:
        refined = unstable
    logger.debug("%d unstable neuron(s), %d get LP bounds", unstable.size, len(refined))
    bounds =[NeuronBounds(float(lo), float(hi)) for lo, hi in zip(lower, upper)]
    for i in refined:
        _check_deadline(deadline)
        tight = dim_bounds(s, int(i), BoundMode.LP, solver)
        lo = max(tight.lower, bounds[i].lower)
        hi = max(min(tight.upper, bounds[i].upper), lo)
        bounds[i] = NeuronBounds(lo, hi)
    return bounds


def _exact_relu_layer(stars: List[StarSet], width: int, max_stars: int,
                      solver: Optional[SimplexSolver], deadline: Optional[float]) -> List[StarSet]:
    done: List[StarSet] = []
    # depth-first over (star, next neuron)
    stack: List[Tuple[StarSet, int]] = [(s, 0) for s in reversed(stars)]
    while stack:
        _check_deadline(deadline)
        star, neuron = stack.pop()
        if neuron == width:
            done.append(star)
            continue
        branches = relu_exact_step(star, neuron, solver)
        if len(done) + len(stack) + len(branches) > max_stars:
            raise StarBudgetExceeded(f"exact reachability needs more than {max_stars} stars")
        for branch in reversed(branches):
            stack.append((branch, neuron + 1))
    return done


def reach(net: Network, input_set: StarSet, method: Method,
          pre_bounds: Optional[List[LayerBounds]] = None,
          max_stars: int = DEFAULT_MAX_STARS,
          deadline: Optional[float] = None,
          solver: Optional[SimplexSolver] = None) -> List[StarSet]:
    """
    Propagate a star through the network.

    Args:
        net: Network made of Affine and Relu layers
        input_set: Star over the network input
        method: exact, approx or relax(factor)
        pre_bounds: Optional per-layer bounds from zono_bounds (entry k bounds the input of layer k)
        max_stars: Star budget for exact mode
        deadline: time.monotonic() value after which ReachTimeout is raised
        solver: LP solver (defaults to the shared instance)

    Returns:
        Output stars; a single star unless method is exact
    """
    if input_set.dim != net.input_dim:
        raise DimensionMismatchError(f"input star dim {input_set.dim} != network input dim {net.input_dim}")
    stars = [input_set]
    for index, layer in enumerate(net.layers):
        _check_deadline(deadline)
        if isinstance(layer, AffineLayer):
            stars = [affine_map(s, layer.weights, layer.bias) for s in stars]
        elif method.kind == ReachMethod.EXACT:
            stars = _exact_relu_layer(stars, layer.width, max_stars, solver, deadline)
        else:
            pre = pre_bounds[index] if pre_bounds is not None else None
            star = stars[0]
            bounds = _layer_bounds(star, method, pre, solver, deadline)
            for neuron, nb in enumerate(bounds):
                star = relu_approx_step(star, neuron, nb)
            stars = [star]
        logger.debug("layer %d (%s): %d star(s)", index, type(layer).__name__, len(stars))
    return stars


def output_bounds(stars: Sequence[StarSet], mode: BoundMode = BoundMode.LP,
                  solver: Optional[SimplexSolver] = None) -> LayerBounds:
    """Elementwise hull of per-dimension bounds over a list of stars"""
    lower = np.full(stars[0].dim, np.inf)
    upper = np.full(stars[0].dim, -np.inf)
    for s in stars:
        for i in range(s.dim):
            nb = dim_bounds(s, i, mode, solver)
            lower[i] = min(lower[i], nb.lower)
            upper[i] = max(upper[i], nb.upper)
    return LayerBounds(lower=lower, upper=upper)


def zono_bounds(net: Network, lb: Sequence[float], ub: Sequence[float]) -> List[LayerBounds]:
    """
    Zonotope pre-bounds.

    Returns one LayerBounds per layer boundary: entry 0 is the input box,
    entry k + 1 bounds the output of layer k.
    """
    lb = np.asarray(lb, dtype=np.float64)
    ub = np.asarray(ub, dtype=np.float64)
    if lb.shape != (net.input_dim,) or ub.shape != (net.input_dim,):
        raise DimensionMismatchError(f"box has shape {lb.shape}, network expects ({net.input_dim},)")
    if np.any(lb > ub):
        raise ValueError("lower bound exceeds upper bound")
    radius = (ub - lb) / 2.0
    live = np.flatnonzero(radius > 0.0)
    zono = Zonotope(center=(lb + ub) / 2.0, generators=np.diag(radius)[:, live])
    result = [LayerBounds(lower=lb.copy(), upper=ub.copy())]
    for layer in net.layers:
        if isinstance(layer, AffineLayer):
            zono = Zonotope(center=layer.weights @ zono.center + layer.bias,
                            generators=layer.weights @ zono.generators)
        else:
            zono = _zono_relu(zono)
        lower, upper = zono.bounds()
        result.append(LayerBounds(lower=lower, upper=upper))
    return result


def _zono_relu(zono: Zonotope) -> Zonotope:
    lower, upper = zono.bounds()
    center = zono.center.copy()
    generators = zono.generators.copy()
    fresh = []
    for i in range(center.shape[0]):
        l, u = lower[i], upper[i]
        if l >= 0.0:
            continue
        if u <= 0.0:
            center[i] = 0.0
            generators[i] = 0.0
            continue
        slope = u / (u - l)
        offset = -slope * l / 2.0
        center[i] = slope * center[i] + offset
        generators[i] *= slope
        column = np.zeros(center.shape[0])
        column[i] = offset
        fresh.append(column)
    if fresh:
        generators = np.hstack([generators, np.array(fresh).T])
    return Zonotope(center=center, generators=generators)
