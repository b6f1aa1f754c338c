"""
Tests for query orchestration: falsify -> relax -> approx, and the exact mode.

The random-network checks compare the incomplete pipeline against exact star
reachability, which is complete whenever it finishes within its budget.
"""

import os
import sys

import numpy as np
import pytest

# Add the project root to the Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from utils.errors import DimensionMismatchError, InfeasibleStarError, SpecError
from utils.lp_solver import SimplexSolver
from utils.network import AffineLayer, Network, ReluLayer, infer
from utils.specgen import InputSpec
from utils.star_domain import Method, StarSet, from_box, reach
from utils.verdict import Stage, Verdict, VerdictCode, load_verdict, save_verdict
from utils.vnnlib import emit, parse
from verifier import (
    ExactBudget, VerifierConfig, VerifyMethod, _exact_witnesses, check_output_set, run_query, verify_exact,
    verify_query,
)

SMALL_BUDGET = ExactBudget(max_stars=256, timeout_s=20.0)


def box_spec(x, eps, target):
    x = np.asarray(x, dtype=float)
    return InputSpec(x=x, lower=x - eps, upper=x + eps, epsilon=float(eps), mask="all", target=target)


def random_net(rng):
    n_in = int(rng.integers(2, 9))
    hidden = [int(rng.integers(2, 9)) for _ in range(int(rng.integers(0, 3)))]
    sizes = [n_in] + hidden + [int(rng.integers(2, 5))]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        layers.append(AffineLayer(weights=rng.normal(size=(fan_out, fan_in)), bias=0.3 * rng.normal(size=fan_out)))
        if i < len(sizes) - 2:
            layers.append(ReluLayer(width=fan_out))
    return Network(input_dim=n_in, layers=layers, num_classes=sizes[-1])


def identity_net():
    return Network(input_dim=2, layers=[AffineLayer(weights=np.eye(2), bias=np.zeros(2))], num_classes=2)


def test_identity_net_robust_and_falsified():
    net = identity_net()
    robust = verify_query(net, box_spec([1.0, 0.0], 0.4, 0))
    assert robust.code == VerdictCode.ROBUST
    assert robust.stage == Stage.RELAX
    falsified = verify_query(net, box_spec([1.0, 0.0], 0.6, 0))
    assert falsified.code == VerdictCode.FALSIFIED
    assert falsified.stage == Stage.FALSIFICATION
    assert falsified.predicted == 1
    for verdict in (verify_exact(net, box_spec([1.0, 0.0], 0.4, 0)),
                    verify_exact(net, box_spec([1.0, 0.0], 0.6, 0))):
        assert verdict.stage == Stage.EXACT
    assert verify_exact(net, box_spec([1.0, 0.0], 0.4, 0)).code == VerdictCode.ROBUST
    assert verify_exact(net, box_spec([1.0, 0.0], 0.6, 0)).code == VerdictCode.FALSIFIED


def test_tie_is_not_certified():
    net = identity_net()
    # at eps = 0.5 the best rival point ties the target exactly
    check = approx_output_check(net, box_spec([1.0, 0.0], 0.5, 0))
    assert not check.certified


def approx_output_check(net, spec):
    stars = reach(net, from_box(spec.lower, spec.upper), Method.approx())
    return check_output_set(stars, spec.target)


def test_stage_times_sum_to_total():
    rng = np.random.default_rng(0)
    net = random_net(rng)
    x = rng.normal(size=net.input_dim)
    _, label = infer(net, x)
    verdict = verify_query(net, box_spec(x, 0.05, label), VerifierConfig(num_samples=20))
    times = verdict.time_s
    assert times.total == pytest.approx(times.falsify + times.relax + times.approx + times.exact)
    assert verdict.seed == 0
    assert verdict.method_config["num_samples"] == 20


def test_auto_never_contradicts_exact():
    """Soundness over random small networks; exact budget overruns are skipped"""
    rng = np.random.default_rng(2024)
    compared = 0
    for case in range(200):
        net = random_net(rng)
        x = rng.normal(size=net.input_dim)
        _, label = infer(net, x)
        spec = box_spec(x, float(rng.uniform(0.01, 0.2)), label)
        auto = verify_query(net, spec, VerifierConfig(num_samples=50, seed=case))
        exact = verify_exact(net, spec, SMALL_BUDGET)
        if auto.code == VerdictCode.FALSIFIED:
            point = np.array(auto.counterexample)
            assert spec.contains(point)
            assert infer(net, point)[1] != label
        if exact.code == VerdictCode.UNKNOWN:
            continue
        compared += 1
        if auto.code == VerdictCode.ROBUST:
            assert exact.code == VerdictCode.ROBUST, f"case {case}: certified but exact found a counterexample"
        if auto.code == VerdictCode.FALSIFIED:
            assert exact.code == VerdictCode.FALSIFIED, f"case {case}: falsified but exact proved robustness"
    assert compared >= 100


def test_exact_counterexamples_revalidate():
    rng = np.random.default_rng(7)
    found = 0
    for _ in range(60):
        net = random_net(rng)
        x = rng.normal(size=net.input_dim)
        _, label = infer(net, x)
        spec = box_spec(x, 0.5, label)
        verdict = verify_exact(net, spec, SMALL_BUDGET)
        if verdict.code == VerdictCode.FALSIFIED:
            found += 1
            point = np.array(verdict.counterexample)
            assert spec.contains(point)
            assert infer(net, point)[1] == verdict.predicted != label
    assert found > 0


def test_zero_epsilon_agrees_with_inference():
    rng = np.random.default_rng(11)
    for case in range(100):
        net = random_net(rng)
        x = rng.normal(size=net.input_dim)
        logits, label = infer(net, x)
        target = int(rng.integers(0, net.num_classes))
        verdict = verify_query(net, box_spec(x, 0.0, target), VerifierConfig(num_samples=5, seed=case))
        if target == label:
            assert verdict.code == VerdictCode.ROBUST
        else:
            assert verdict.code == VerdictCode.FALSIFIED
            assert verdict.counterexample == x.tolist()


def test_exact_verdicts_are_monotone_in_epsilon():
    rng = np.random.default_rng(5)
    epsilons = [0.0, 0.05, 0.1, 0.2, 0.4]
    for _ in range(30):
        net = random_net(rng)
        x = rng.normal(size=net.input_dim)
        _, label = infer(net, x)
        codes = [verify_exact(net, box_spec(x, eps, label), SMALL_BUDGET).code for eps in epsilons]
        decided = [c for c in codes if c != VerdictCode.UNKNOWN]
        # once falsified, every larger box stays falsified
        if VerdictCode.FALSIFIED in decided:
            first = decided.index(VerdictCode.FALSIFIED)
            assert all(c == VerdictCode.FALSIFIED for c in decided[first:])


def test_counterexample_reuse_keeps_falsified_queries_falsified():
    rng = np.random.default_rng(6)
    epsilons = [0.05, 0.1, 0.2, 0.4, 0.8]
    for case in range(40):
        net = random_net(rng)
        x = rng.normal(size=net.input_dim)
        _, label = infer(net, x)
        hints = []
        falsified = False
        for eps in epsilons:
            cfg = VerifierConfig(num_samples=20, seed=case)
            verdict = verify_query(net, box_spec(x, eps, label), cfg, hints)
            if falsified:
                assert verdict.code == VerdictCode.FALSIFIED
            if verdict.counterexample is not None:
                falsified = True
                hints = [verdict.counterexample]


def test_timeout_gives_unknown():
    net = identity_net()
    verdict = verify_query(net, box_spec([1.0, 0.0], 0.4, 0), VerifierConfig(timeout_s=1e-9))
    assert verdict.code == VerdictCode.UNKNOWN
    assert verdict.error == "timeout"


def test_exact_budget_exceeded_gives_unknown():
    rng = np.random.default_rng(3)
    layers = [AffineLayer(weights=rng.normal(size=(8, 4)), bias=np.zeros(8)), ReluLayer(width=8),
              AffineLayer(weights=rng.normal(size=(2, 8)), bias=np.zeros(2))]
    net = Network(input_dim=4, layers=layers, num_classes=2)
    x = np.zeros(4)
    _, label = infer(net, x)
    verdict = verify_exact(net, box_spec(x, 1.0, label), ExactBudget(max_stars=2))
    assert verdict.code == VerdictCode.UNKNOWN
    assert verdict.stage == Stage.EXACT
    assert verdict.error


def test_run_query_dispatches_on_method():
    net = identity_net()
    cfg = VerifierConfig(method=VerifyMethod.EXACT, seed=4)
    verdict = run_query(net, box_spec([1.0, 0.0], 0.4, 0), cfg)
    assert verdict.stage == Stage.EXACT
    assert verdict.seed == 4
    assert verdict.method_config["method"] == "exact"


def test_bad_queries_raise():
    net = identity_net()
    with pytest.raises(DimensionMismatchError):
        verify_query(net, box_spec([1.0, 0.0, 0.0], 0.1, 0))
    with pytest.raises(SpecError):
        verify_query(net, box_spec([1.0, 0.0], 0.1, 5))


def test_verdict_requires_counterexample_exactly_when_falsified():
    with pytest.raises(ValueError):
        Verdict(code=VerdictCode.FALSIFIED, stage=Stage.FALSIFICATION)
    with pytest.raises(ValueError):
        Verdict(code=VerdictCode.ROBUST, stage=Stage.RELAX, counterexample=[0.0])


def test_verdict_file_round_trip(tmp_path):
    verdict = verify_query(identity_net(), box_spec([1.0, 0.0], 0.6, 0))
    path = tmp_path / "verdict.json"
    save_verdict(verdict, str(path))
    loaded = load_verdict(str(path))
    assert loaded.code == verdict.code
    assert loaded.counterexample == verdict.counterexample
    assert loaded.word == "violated"


def test_counterexamples_satisfy_the_parsed_property():
    """Emit, parse back, verify the parsed box; violated verdicts must satisfy the parsed disjunction"""
    rng = np.random.default_rng(13)
    found = 0
    for case in range(60):
        net = random_net(rng)
        x = rng.normal(size=net.input_dim)
        target = int(rng.integers(0, net.num_classes))
        parsed = parse(emit(box_spec(x, 0.3, target), target, net.num_classes))
        spec = parsed.to_input_spec()
        assert spec.target == target
        for verdict in (verify_query(net, spec, VerifierConfig(num_samples=30, seed=case)),
                        verify_exact(net, spec, SMALL_BUDGET)):
            if verdict.code != VerdictCode.FALSIFIED:
                continue
            found += 1
            point = np.array(verdict.counterexample)
            logits, _ = infer(net, point)
            assert parsed.is_violated_by(logits)
            assert all(lo <= v <= hi for v, (lo, hi) in zip(point, parsed.input_bounds))
    assert found > 0


def test_exact_witness_search_reports_empty_star():
    # alpha_0 <= -1 and alpha_0 >= 1 leave no predicate point
    star = StarSet(center=np.zeros(2), basis=np.eye(2), C=np.array([[1.0, 0.0], [-1.0, 0.0]]),
                   d=np.array([-1.0, -1.0]), plb=-2.0 * np.ones(2), pub=2.0 * np.ones(2))
    check = check_output_set([star], 0, SimplexSolver())
    assert not check.certified and check.witness is None and check.error
    with pytest.raises(InfeasibleStarError):
        _exact_witnesses([star], 0, SimplexSolver(), None)
