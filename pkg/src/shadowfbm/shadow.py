"""
Shadow prices on scenario trees: extraction from an optimal strategy and
machine verification of the defining properties.

The deflator ``Y0`` is ``U'(g)`` at the leaves and its conditional
expectation elsewhere. The shadow price ``S_hat`` must make ``Y0 * S_hat``
a martingale, stay in the bid-ask spread, and sit on the traded side of the
spread wherever the optimal strategy trades. Extraction runs a backward
recursion of feasible intervals for ``S_hat`` and then a forward pass that
picks, at every node, children values as close as possible to the clamped
conditional expectation. When the clamp never binds, the result is exactly
the clamped-expectation rule.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from ._barrier import SolverError
from .ledger import CostSpec
from .tree_optimizer import frictionless_optimize

DEFAULT_TOLERANCES = {
    "spread_containment": 1e-8,
    "boundary_trading": 1e-6,
    "frictionless_match": 1e-6,
    "martingale_residual": 1e-8,
    "budget_identity": 1e-6,
}


def _lam(cost):
    return cost.lam if isinstance(cost, CostSpec) else float(cost)


@dataclass
class ShadowReport:
    shadow_price: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    y_hat: float
    dual_value: float
    side: np.ndarray
    flags: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "shadow_price": self.shadow_price.tolist(),
            "y0": self.y0.tolist(),
            "y1": self.y1.tolist(),
            "y_hat": self.y_hat,
            "dual_value": self.dual_value,
            "side": self.side.tolist(),
            "flags": self.flags,
        }


@dataclass
class CheckResult:
    passed: bool
    value: float
    tol: float

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.value = float(self.value)
        self.tol = float(self.tol)


@dataclass
class VerificationRecord:
    checks: dict

    @property
    def passed(self):
        return all(c.passed for c in self.checks.values())

    def to_dict(self):
        return {
            "passed": self.passed,
            "checks": {k: {"passed": c.passed, "value": c.value, "tol": c.tol} for k, c in self.checks.items()},
        }


def _sides(tree, result, trade_tol):
    """+1 where the strategy buys, -1 where it sells, 0 otherwise."""
    d = result.trades
    return np.where(d > trade_tol, 1, np.where(d < -trade_tol, -1, 0))


def _martingale_gap(tree, y0, s_hat):
    """``|S_hat_n - E[Y0_c S_hat_c | n] / Y0_n|`` per interior node."""
    out = np.zeros(tree.n_nodes)
    for n in tree.interior:
        k = tree.children[n]
        out[n] = abs(s_hat[n] - np.dot(tree.prob[k], y0[k] * s_hat[k]) / y0[n])
    return out


def extract_shadow(tree, cost, utility, result, trade_tol=None):
    """Shadow price candidate and dual deflator from an optimal strategy.

    Parameters
    ----------
    tree : ScenarioTree
    cost : CostSpec or float
    utility : UtilitySpec
    result : OptimizationResult
    trade_tol : float, optional
        Trades smaller than this count as no trade. Defaults to
        ``1e-9 x / S_0``.

    Returns
    -------
    ShadowReport
        Containment failures are flagged, not raised.
    """
    lam = _lam(cost)
    S = tree.price
    if trade_tol is None:
        trade_tol = 1e-9 * result.x / S[0]
    y0 = np.zeros(tree.n_nodes)
    y0[tree.leaves] = utility.u_prime(result.terminal_wealth)
    y0 = tree.cond_expectation(y0)
    side = _sides(tree, result, trade_tol) if lam > 0 else np.zeros(tree.n_nodes, dtype=int)

    lo = np.where(side == 1, S, (1 - lam) * S)
    hi = np.where(side == -1, (1 - lam) * S, S)
    f_lo, f_hi = lo.copy(), hi.copy()
    infeasible = 0.0
    for n in tree.interior[::-1]:
        k = tree.children[n]
        w = tree.prob[k] * y0[k] / y0[n]
        r_lo, r_hi = np.dot(w, f_lo[k]), np.dot(w, f_hi[k])
        a, b = max(lo[n], r_lo), min(hi[n], r_hi)
        if a > b:
            # keep the martingale property, let containment report the miss
            infeasible = max(infeasible, a - b)
            p = r_hi if r_hi < lo[n] else r_lo
            a = b = p
        f_lo[n], f_hi[n] = a, b

    canon = 0.5 * (f_lo + f_hi)
    for n in tree.interior[::-1]:
        k = tree.children[n]
        w = tree.prob[k] * y0[k] / y0[n]
        canon[n] = min(max(np.dot(w, canon[k]), f_lo[n]), f_hi[n])

    s_hat = canon.copy()
    for n in tree.interior:
        k = tree.children[n]
        w = tree.prob[k] * y0[k] / y0[n]
        base = np.dot(w, canon[k])
        gap = s_hat[n] - base
        target = f_hi[k] if gap > 0 else f_lo[k]
        room = np.dot(w, target - canon[k])
        theta = 0.0 if room == 0 else min(max(gap / room, 0.0), 1.0)
        s_hat[k] = canon[k] + theta * (target - canon[k])
    if lam == 0.0:
        # the spread is a point; rounding in Y0 must not move S_hat off it
        s_hat = S.copy()

    y_hat = float(y0[0])
    probs = tree.abs_prob[tree.leaves]
    dual_value = float(np.dot(probs, utility.v_conjugate(y0[tree.leaves])))
    containment = float(np.max(np.maximum.reduce([(1 - lam) * S - s_hat, s_hat - S, np.zeros_like(S)])))
    traded = side != 0
    pin = np.where(side == 1, S, (1 - lam) * S)
    boundary = float(np.max(np.abs(s_hat - pin)[traded], initial=0.0))
    mart = float(np.max(_martingale_gap(tree, y0, s_hat), initial=0.0))
    flags = {
        "spread_containment": containment,
        "boundary_trading": boundary,
        "frictionless_match": None,
        "martingale_residual": mart,
        "conjugacy_gap": dual_value + result.x * y_hat - result.value,
        "interval_infeasibility": infeasible,
    }
    return ShadowReport(s_hat, y0, y0 * s_hat, y_hat, dual_value, side, flags)


def _tolerances(tol):
    if tol is None:
        return dict(DEFAULT_TOLERANCES)
    if isinstance(tol, dict):
        out = dict(DEFAULT_TOLERANCES)
        out.update(tol)
        return out
    return {k: float(tol) for k in DEFAULT_TOLERANCES}


def verify_shadow(tree, cost, utility, x, result, report, tol=None):
    """Check that ``report.shadow_price`` is a shadow price for ``result``.

    Checks
    ------
    spread_containment
        ``(1 - lambda) S - tol <= S_hat <= S + tol``.
    boundary_trading
        Where the strategy trades, ``S_hat`` is the traded side of the spread.
    frictionless_match
        Re-solving without costs at ``S_hat`` reproduces the value (relative
        to ``max(1, |u|)``) and every terminal wealth (relative to
        ``max(x, |g|)``).
    martingale_residual
        ``Y0 S_hat`` and ``Y0 phi0 + Y0 S_hat phi1`` are martingales; the
        first is measured in price units, the second relative to the gross
        deflated position ``Y0 (|phi0| + S_hat |phi1|)``, at least ``x y_hat``.
    budget_identity
        ``E[g Y0_T] = x y_hat`` relative to ``x y_hat``.

    ``tol`` is a float applied to every check, a dict of per-check values,
    or None for the defaults.
    """
    tols = _tolerances(tol)
    lam = _lam(cost)
    S = tree.price
    s_hat = np.asarray(report.shadow_price, dtype=float)
    y0 = np.asarray(report.y0, dtype=float)
    y_hat = float(y0[0])
    checks = {}

    contain = float(np.max(np.maximum.reduce([(1 - lam) * S - s_hat, s_hat - S, np.zeros_like(S)])))
    checks["spread_containment"] = CheckResult(contain <= tols["spread_containment"], contain, tols["spread_containment"])

    trade_tol = tols["boundary_trading"] * x / S[0]
    d = result.trades
    pin = np.where(d > 0, S, (1 - lam) * S)
    traded = np.abs(d) > trade_tol
    bnd = float(np.max(np.abs(s_hat - pin)[traded], initial=0.0))
    checks["boundary_trading"] = CheckResult(bnd <= tols["boundary_trading"], bnd, tols["boundary_trading"])

    try:
        fl = frictionless_optimize(tree, utility, x, tol=1e-10, prices=s_hat)
        gap_v = abs(fl.value - result.value) / max(1.0, abs(result.value))
        g = result.terminal_wealth
        gap_g = float(np.max(np.abs(fl.terminal_wealth - g) / np.maximum(x, np.abs(g))))
        fm = max(gap_v, gap_g)
    except SolverError:
        fm = np.inf
    checks["frictionless_match"] = CheckResult(fm <= tols["frictionless_match"], float(fm), tols["frictionless_match"])

    wealth = y0 * result.cash + y0 * s_hat * result.holdings
    # rounding in the wealth scales with the gross position, not the net
    gross = np.maximum(y0 * (np.abs(result.cash) + s_hat * np.abs(result.holdings)), x * y_hat)
    m_res = 0.0
    for n in tree.interior:
        k = tree.children[n]
        m_res = max(m_res, abs(wealth[n] - np.dot(tree.prob[k], wealth[k])) / gross[n])
    p_res = float(np.max(_martingale_gap(tree, y0, s_hat), initial=0.0))
    mart = max(m_res, p_res)
    checks["martingale_residual"] = CheckResult(mart <= tols["martingale_residual"], mart, tols["martingale_residual"])

    probs = tree.abs_prob[tree.leaves]
    budget = abs(float(np.dot(probs, result.terminal_wealth * y0[tree.leaves])) - x * y_hat) / (x * y_hat)
    checks["budget_identity"] = CheckResult(budget <= tols["budget_identity"], budget, tols["budget_identity"])
    return VerificationRecord(checks)


def myopic_fraction(prob, returns):
    """Fraction of wealth maximising ``sum p log(1 + pi R)``."""
    prob = np.asarray(prob, dtype=float)
    r = np.asarray(returns, dtype=float)
    if np.all(np.abs(r) < 1e-15):
        return 0.0
    if np.all(r >= 0) or np.all(r <= 0):
        raise ValueError("one-step returns admit an arbitrage; log growth is unbounded")
    lo = -1.0 / r.max()
    hi = -1.0 / r.min()

    def foc(pi):
        return float(np.sum(prob * r / (1.0 + pi * r)))

    span = hi - lo
    return brentq(foc, lo + 1e-12 * span, hi - 1e-12 * span, xtol=1e-15, rtol=1e-15)


def myopic_check(tree, result, prices):
    """Largest first-order residual of one-step log growth at the optimal fractions.

    ``prices`` is the price the strategy is frictionless optimal for (a
    shadow price, or the tree price when ``lambda = 0``).
    """
    p = np.asarray(getattr(prices, "shadow_price", prices), dtype=float)
    worst = 0.0
    for n in tree.interior:
        k = tree.children[n]
        r = p[k] / p[n] - 1.0
        if np.all(np.abs(r) < 1e-15):
            continue
        w = result.cash[n] + result.holdings[n] * p[n]
        pi = result.holdings[n] * p[n] / w
        worst = max(worst, abs(float(np.sum(tree.prob[k] * r / (1.0 + pi * r)))))
    return worst
