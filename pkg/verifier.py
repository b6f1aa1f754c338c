"""
Query orchestration: falsify, then relax-star reachability, then approx-star
reachability; plus an exact complete mode used as an oracle on small nets.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence
import logging
import time

import numpy as np
from pydantic import BaseModel, Field

from utils.errors import (
    DimensionMismatchError, InfeasibleStarError, LpIterationLimit, ReachTimeout, SpecError,
    StarBudgetExceeded,
)
from utils.falsifier import FalsifyConfig, falsify
from utils.lp_solver import Sense, SimplexSolver
from utils.network import Network, infer
from utils.specgen import InputSpec
from utils.star_domain import Method, StarSet, from_box, reach, zono_bounds
from utils.verdict import Stage, StageTimes, Verdict, VerdictCode

logger = logging.getLogger(__name__)

# max(Y_j - Y_target) must be below -CERT_TOL to certify
CERT_TOL = 1e-9


class VerifyMethod(str, Enum):
    AUTO = "auto"
    EXACT = "exact"


class VerifierConfig(BaseModel):
    num_samples: int = Field(default=500, ge=1)
    relax_factor: float = Field(default=0.5, ge=0.0, le=1.0)
    timeout_s: float = Field(default=300.0, gt=0.0)
    seed: int = Field(default=0, ge=0)
    include_corners: bool = True
    method: VerifyMethod = VerifyMethod.AUTO
    max_stars: int = Field(default=10_000, ge=1)
    lp_max_iter: int = Field(default=50_000, ge=1)
    zono_prebounds: bool = True

    def falsify_config(self) -> FalsifyConfig:
        return FalsifyConfig(num_samples=self.num_samples, seed=self.seed,
                             include_corners=self.include_corners)

    def budget(self) -> "ExactBudget":
        return ExactBudget(max_stars=self.max_stars, timeout_s=self.timeout_s)


class ExactBudget(BaseModel):
    max_stars: int = Field(default=10_000, ge=1)
    timeout_s: float = Field(default=300.0, gt=0.0)


@dataclass(frozen=True)
class OutputCheck:
    """certified, or undetermined with the maximizing predicate point when one was found"""
    certified: bool
    witness: Optional[np.ndarray] = None
    star_index: Optional[int] = None
    rival: Optional[int] = None
    margin: Optional[float] = None
    error: Optional[str] = None


def _check_query(net: Network, spec: InputSpec) -> None:
    if spec.dim != net.input_dim:
        raise DimensionMismatchError(f"spec has {spec.dim} inputs, network expects {net.input_dim}")
    if not 0 <= spec.target < net.num_classes:
        raise SpecError(f"target {spec.target} outside [0, {net.num_classes})")


def check_output_set(stars: Sequence[StarSet], target: int,
                     solver: Optional[SimplexSolver] = None,
                     deadline: Optional[float] = None) -> OutputCheck:
    """
    Certify that the target logit beats every other logit on every star.

    Args:
        stars: Output stars over N logits
        target: Protected class
        solver: LP solver
        deadline: time.monotonic() value after which ReachTimeout is raised

    Returns:
        OutputCheck; ties (max = 0) and LP failures are undetermined
    """
    for index, star in enumerate(stars):
        if not 0 <= target < star.dim:
            raise SpecError(f"target {target} outside output dim {star.dim}")
        for rival in range(star.dim):
            if rival == target:
                continue
            if deadline is not None and time.monotonic() > deadline:
                raise ReachTimeout("output check deadline exceeded")
            direction = star.basis[rival] - star.basis[target]
            offset = float(star.center[rival] - star.center[target])
            # interval pre-check before paying for an LP
            estimate = offset + np.maximum(direction, 0.0) @ star.pub + np.minimum(direction, 0.0) @ star.plb
            if estimate < -CERT_TOL:
                continue
            try:
                value, alpha = star.optimize_direction(direction, offset, Sense.MAXIMIZE, solver)
            except InfeasibleStarError as e:
                logger.debug("output check on star %d failed: %s", index, e)
                return OutputCheck(certified=False, star_index=index, rival=rival, error=str(e))
            if value >= -CERT_TOL:
                return OutputCheck(certified=False, witness=alpha, star_index=index, rival=rival, margin=value)
    return OutputCheck(certified=True)


def _deadline(timeout_s: float) -> float:
    return time.monotonic() + timeout_s


def _verdict(code: VerdictCode, stage: Stage, marks: dict, cfg: BaseModel, seed: int,
             counterexample: Optional[np.ndarray] = None, predicted: Optional[int] = None,
             error: Optional[str] = None) -> Verdict:
    times = {name: max(0.0, value) for name, value in marks.items()}
    times["total"] = sum(times.values())
    return Verdict(
        code=code,
        stage=stage,
        time_s=StageTimes(**times),
        counterexample=[float(v) for v in counterexample] if counterexample is not None else None,
        predicted=predicted,
        seed=seed,
        method_config=cfg.model_dump(mode="json"),
        error=error,
    )


def verify_query(net: Network, spec: InputSpec, cfg: Optional[VerifierConfig] = None,
                 hints: Optional[Sequence[Sequence[float]]] = None) -> Verdict:
    """
    Run falsify → relax → approx on one query.

    Args:
        net: Network under test
        spec: Input box and protected class
        cfg: Verifier configuration
        hints: Extra falsifier candidates, e.g. a counterexample from a smaller epsilon

    Returns:
        Verdict with code 0 (falsified), 1 (robust) or 2 (unknown / timeout)
    """
    cfg = cfg or VerifierConfig()
    _check_query(net, spec)
    solver = SimplexSolver(max_iter=cfg.lp_max_iter)
    deadline = _deadline(cfg.timeout_s)
    marks = {"falsify": 0.0, "relax": 0.0, "approx": 0.0}

    start = time.perf_counter()
    found = falsify(net, spec, cfg.falsify_config(), hints)
    checkpoint = time.perf_counter()
    marks["falsify"] = checkpoint - start
    if found is not None:
        point, label = found
        return _verdict(VerdictCode.FALSIFIED, Stage.FALSIFICATION, marks, cfg, cfg.seed, point, label)
    if time.monotonic() > deadline:
        logger.warning("query timed out during falsification")
        return _verdict(VerdictCode.UNKNOWN, Stage.FALSIFICATION, marks, cfg, cfg.seed, error="timeout")

    stage_methods = [(Stage.RELAX, "relax", Method.relax(cfg.relax_factor)),
                     (Stage.APPROX, "approx", Method.approx())]
    pre_bounds = None
    input_set = from_box(spec.lower, spec.upper)
    for stage, mark, method in stage_methods:
        try:
            if cfg.zono_prebounds and pre_bounds is None:
                pre_bounds = zono_bounds(net, spec.lower, spec.upper)
            stars = reach(net, input_set, method, pre_bounds=pre_bounds, deadline=deadline, solver=solver)
            result = check_output_set(stars, spec.target, solver, deadline)
        except (ReachTimeout, LpIterationLimit) as e:
            marks[mark] = time.perf_counter() - checkpoint
            logger.warning("%s stage gave up: %s", stage.value, e)
            return _verdict(VerdictCode.UNKNOWN, stage, marks, cfg, cfg.seed, error=str(e))
        except InfeasibleStarError as e:
            logger.debug("%s stage: %s", stage.value, e)
            result = OutputCheck(certified=False)
        now = time.perf_counter()
        marks[mark] = now - checkpoint
        checkpoint = now
        if result.certified:
            return _verdict(VerdictCode.ROBUST, stage, marks, cfg, cfg.seed)
        logger.debug("%s stage undetermined (rival %s, margin %s)", stage.value, result.rival, result.margin)
    return _verdict(VerdictCode.UNKNOWN, Stage.APPROX, marks, cfg, cfg.seed)


def _recover_counterexample(net: Network, spec: InputSpec, input_set: StarSet,
                            alpha: np.ndarray) -> Optional[tuple]:
    """Map a predicate point back to the input and re-validate it under infer"""
    point = np.clip(input_set.point(alpha[:input_set.num_pred]), spec.lower, spec.upper)
    _, label = infer(net, point)
    if label != spec.target:
        return point, label
    return None


def verify_exact(net: Network, spec: InputSpec, budget: Optional[ExactBudget] = None,
                 solver: Optional[SimplexSolver] = None) -> Verdict:
    """Complete check by exact star reachability; code 2 only on budget or timeout"""
    budget = budget or ExactBudget()
    _check_query(net, spec)
    solver = solver or SimplexSolver()
    start = time.perf_counter()
    deadline = _deadline(budget.timeout_s)
    input_set = from_box(spec.lower, spec.upper)
    try:
        stars = reach(net, input_set, Method.exact(), max_stars=budget.max_stars,
                      deadline=deadline, solver=solver)
        candidates = _exact_witnesses(stars, spec.target, solver, deadline)
    except (StarBudgetExceeded, ReachTimeout, LpIterationLimit, InfeasibleStarError) as e:
        logger.warning("exact verification gave up: %s", e)
        return _verdict(VerdictCode.UNKNOWN, Stage.EXACT, {"exact": time.perf_counter() - start},
                        budget, 0, error=str(e))

    marks = {"exact": time.perf_counter() - start}
    if not candidates:
        return _verdict(VerdictCode.ROBUST, Stage.EXACT, marks, budget, 0)
    for alpha in candidates:
        recovered = _recover_counterexample(net, spec, input_set, alpha)
        if recovered is not None:
            marks["exact"] = time.perf_counter() - start
            return _verdict(VerdictCode.FALSIFIED, Stage.EXACT, marks, budget, 0, recovered[0], recovered[1])
    logger.warning("exact witness did not re-validate under inference")
    return _verdict(VerdictCode.UNKNOWN, Stage.EXACT, marks, budget, 0, error="witness did not re-validate")


def _exact_witnesses(stars: List[StarSet], target: int, solver: SimplexSolver,
                     deadline: float) -> List[np.ndarray]:
    """Maximizing predicate points of every (star, rival) pair that fails to certify"""
    witnesses = []
    for index, star in enumerate(stars):
        check = check_output_set([star], target, solver, deadline)
        if check.certified:
            continue
        if check.witness is None:
            raise InfeasibleStarError(f"output LP on star {index}: {check.error}")
        witnesses.append(check.witness)
        # other rivals of the same star can witness where the first one ties
        for rival in range(star.dim):
            if rival in (target, check.rival):
                continue
            direction = star.basis[rival] - star.basis[target]
            offset = float(star.center[rival] - star.center[target])
            value, alpha = star.optimize_direction(direction, offset, Sense.MAXIMIZE, solver)
            if value >= -CERT_TOL:
                witnesses.append(alpha)
    return witnesses


def run_query(net: Network, spec: InputSpec, cfg: Optional[VerifierConfig] = None,
              hints: Optional[Sequence[Sequence[float]]] = None) -> Verdict:
    cfg = cfg or VerifierConfig()
    if cfg.method == VerifyMethod.EXACT:
        verdict = verify_exact(net, spec, cfg.budget(), SimplexSolver(max_iter=cfg.lp_max_iter))
        return verdict.model_copy(update={"seed": cfg.seed, "method_config": cfg.model_dump(mode="json")})
    return verify_query(net, spec, cfg, hints)
