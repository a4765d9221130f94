import numpy as np
import pytest
from helpers import random_tree
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import backward_induction, conic_frictional_value, golden_one_period

from shadowfbm._barrier import SolverError
from shadowfbm.fbm import ModelSpec
from shadowfbm.ledger import CostSpec
from shadowfbm.tree import build_fbs_tree, one_period_tree
from shadowfbm.tree_optimizer import (
    TreeUtilityMaximizer,
    _state_from_trades,
    frictionless_optimize,
    maximize_utility,
)
from shadowfbm.utility import UtilitySpec

LOG = UtilitySpec.log()
ONE = one_period_tree(1.0, [1.2, 0.9], [0.5, 0.5])


def test_one_period_log():
    res = frictionless_optimize(ONE, LOG)
    pi = res.holdings[0] * 1.0 / 1.0
    assert pi == pytest.approx(2.5, abs=1e-9)
    assert res.value == pytest.approx(0.5 * np.log(1.5) + 0.5 * np.log(0.75), abs=1e-12)
    assert res.value == pytest.approx(0.05889151782819174, abs=1e-12)
    res2 = maximize_utility(ONE, 0.0, LOG)
    assert res2.value == pytest.approx(res.value, abs=1e-14)


def test_large_cost_means_no_trade():
    res = maximize_utility(ONE, CostSpec(0.3), LOG)
    assert res.value == pytest.approx(0.0, abs=1e-8)
    assert np.max(np.abs(res.trades)) < 1e-7
    # brute force over buys and sells at the root
    best = -np.inf
    for q in np.linspace(-3, 3, 6001):
        cash = 1.0 - q if q > 0 else 1.0 - 0.7 * q
        leaf = cash + np.where(q > 0, 0.7 * q * np.array([1.2, 0.9]), q * np.array([1.2, 0.9]))
        if np.all(leaf > 0) and cash + min(0.7 * q, q) >= 0:
            best = max(best, 0.5 * np.log(leaf).sum())
    assert best <= 1e-12


def test_power_golden_oracle():
    u = UtilitySpec.power(0.5)
    q, v = golden_one_period(1.2, 0.9, 0.5, 0.5)
    res = frictionless_optimize(ONE, u)
    assert res.holdings[0] == pytest.approx(q, rel=1e-6)
    assert res.value == pytest.approx(v, rel=1e-10)


@pytest.mark.parametrize("alpha", [None, -1.0, 0.5])
@pytest.mark.parametrize("seed", range(4))
def test_frictionless_matches_backward_induction(alpha, seed):
    tree = random_tree(np.random.default_rng(seed), 3)
    u = LOG if alpha is None else UtilitySpec.power(alpha)
    res = maximize_utility(tree, 0.0, u)
    value, hold = backward_induction(tree, alpha)
    assert res.value == pytest.approx(value, rel=1e-9, abs=1e-10)
    np.testing.assert_allclose(res.holdings[tree.interior], hold[tree.interior], rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("alpha", [None, -1.0, 0.5])
@pytest.mark.parametrize("lam", [0.001, 0.05, 0.3])
def test_frictional_matches_conic_oracle(alpha, lam):
    tree = build_fbs_tree(ModelSpec(0.05, 0.3, 0.7, 1.0), 3)
    u = LOG if alpha is None else UtilitySpec.power(alpha)
    res = maximize_utility(tree, CostSpec(lam), u)
    ref = conic_frictional_value(tree, lam, alpha)
    assert res.value == pytest.approx(ref, rel=1e-7, abs=1e-8)


def test_random_frictional_trees_match_conic_oracle(rng):
    for _ in range(3):
        tree = random_tree(rng, 2, vol=0.3)
        res = maximize_utility(tree, CostSpec(0.02), LOG)
        assert res.value == pytest.approx(conic_frictional_value(tree, 0.02), abs=1e-7)


def test_costs_lower_value(rng):
    tree = random_tree(rng, 3)
    vals = [maximize_utility(tree, lam, LOG).value for lam in (0.0, 0.001, 0.01, 0.1)]
    assert np.all(np.diff(vals) <= 1e-10)


def test_martingale_tree_zero_holdings():
    tree = one_period_tree(1.0, [1.2, 0.9], [1 / 3, 2 / 3])
    for u in (LOG, UtilitySpec.power(0.5), UtilitySpec.power(-2.0)):
        res = frictionless_optimize(tree, u)
        assert abs(res.holdings[0]) < 1e-9
        assert res.value == pytest.approx(float(u.u(1.0)), abs=1e-12)


def test_arbitrage_node_rejected():
    with pytest.raises(SolverError, match="arbitrage"):
        frictionless_optimize(one_period_tree(1.0, [1.2, 1.1], [0.5, 0.5]), LOG)


@settings(max_examples=15, deadline=None)
@given(c=st.floats(0.1, 10.0), seed=st.integers(0, 10**6))
def test_log_scale_equivariance(c, seed):
    tree = random_tree(np.random.default_rng(seed), 2)
    a = maximize_utility(tree, 0.01, LOG, x=1.0)
    b = maximize_utility(tree, 0.01, LOG, x=c)
    assert b.value == pytest.approx(a.value + np.log(c), abs=1e-7)
    np.testing.assert_allclose(b.holdings, c * a.holdings, rtol=1e-5, atol=1e-6 * c)


@settings(max_examples=10, deadline=None)
@given(c=st.floats(0.1, 10.0), seed=st.integers(0, 10**6))
def test_power_homogeneity(c, seed):
    tree = random_tree(np.random.default_rng(seed), 2)
    u = UtilitySpec.power(-1.0)
    a = maximize_utility(tree, 0.01, u, x=1.0)
    b = maximize_utility(tree, 0.01, u, x=c)
    assert b.value == pytest.approx(a.value * c**-1.0, rel=1e-7)


def test_objective_midpoint_concavity(rng):
    tree = random_tree(rng, 2)
    lam = 0.05
    probs = tree.abs_prob[tree.leaves]

    def objective(trades):
        cash, hold, _ = _state_from_trades(tree, trades, lam, 1.0)
        g = cash[tree.leaves]
        return float(probs @ np.log(g)) if np.all(g > 0) else -np.inf

    n_ok = 0
    for _ in range(200):
        t1, t2 = np.zeros(tree.n_nodes), np.zeros(tree.n_nodes)
        t1[tree.interior] = rng.normal(scale=0.5, size=tree.interior.size)
        t2[tree.interior] = rng.normal(scale=0.5, size=tree.interior.size)
        f1, f2 = objective(t1), objective(t2)
        if np.isfinite(f1) and np.isfinite(f2):
            n_ok += 1
            assert objective(0.5 * (t1 + t2)) >= 0.5 * (f1 + f2) - 1e-12
    assert n_ok > 20


def test_result_invariants(rng):
    tree = random_tree(rng, 3)
    lam = 0.02
    res = maximize_utility(tree, lam, UtilitySpec.power(0.5))
    S = tree.price
    liq = res.cash + np.where(res.holdings > 0, (1 - lam) * S * res.holdings, S * res.holdings)
    assert np.all(liq[tree.interior] >= -1e-9)
    assert np.all(res.terminal_wealth > 0)
    np.testing.assert_array_equal(res.holdings[tree.leaves], 0.0)
    assert res.residual <= 1e-8


def test_estimator_api():
    est = TreeUtilityMaximizer(lam=0.01, utility="power", alpha=0.5)
    assert est.get_params()["alpha"] == 0.5
    tree = build_fbs_tree(ModelSpec(0.05, 0.3, 0.5, 1.0), 3)
    est.fit(tree)
    np.testing.assert_array_equal(est.predict(tree), est.result_.holdings)
    assert est.score(tree) == est.result_.value
    with pytest.raises(ValueError):
        TreeUtilityMaximizer(utility="exp").fit(tree)


def test_input_validation():
    with pytest.raises(ValueError):
        maximize_utility(ONE, 0.0, LOG, x=-1.0)
    with pytest.raises(TypeError):
        maximize_utility(ONE, 0.0, "log")
    with pytest.raises(ValueError):
        maximize_utility(ONE, 1.0, LOG)
