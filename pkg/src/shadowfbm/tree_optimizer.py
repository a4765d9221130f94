"""
Expected-utility maximisation on scenario trees, with and without
proportional transaction costs.

The frictional problem is solved over per-node buy and sell amounts
``b, s >= 0`` and a hypograph variable ``g`` for each leaf wealth. The feasible
set is polyhedral:

* ``c_n + (1 - lambda) S_n h_n >= 0`` and ``c_n + S_n h_n >= 0`` at interior
  nodes (liquidation value is the smaller of the two),
* ``g <= c_p + (1 - lambda) S h_p`` and ``g <= c_p + S h_p`` at leaves,

so the program is smooth and concave. A log-barrier interior point method
gets close to the optimum and a Newton step on the detected active set makes
complementarity exact. The frictionless problem is unconstrained in the
holdings and is solved by damped Newton.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator

from ._barrier import SolverError, active_set_polish, barrier_solve
from ._validation import check_positive
from .io import dumps
from .ledger import CostSpec
from .tree import ScenarioTree
from .utility import UtilitySpec

WEALTH_FLOOR = 1e-10


@dataclass
class OptimizationResult:
    """Optimal strategy on a tree.

    ``holdings`` and ``cash`` are post-trade positions per node. At leaves the
    position is liquidated, so holdings are 0 and cash equals the terminal
    wealth. ``trades[n]`` is the change of holdings at node ``n``.
    """

    holdings: np.ndarray
    cash: np.ndarray
    trades: np.ndarray
    terminal_wealth: np.ndarray
    value: float
    residual: float
    x: float
    lam: float
    method: str
    iterations: int = 0
    admissibility_multiplier: float = 0.0
    info: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "holdings": self.holdings.tolist(),
            "cash": self.cash.tolist(),
            "trades": self.trades.tolist(),
            "terminal_wealth": self.terminal_wealth.tolist(),
            "value": self.value,
            "residual": self.residual,
            "x": self.x,
            "lam": self.lam,
            "method": self.method,
            "iterations": self.iterations,
            "admissibility_multiplier": self.admissibility_multiplier,
            "info": self.info,
        }


def _lam(cost):
    return cost.lam if isinstance(cost, CostSpec) else float(cost)


def _state_from_trades(tree, trades, lam, x, prices=None):
    """Cash and holdings after trading, leaves liquidated at bid/ask."""
    s = tree.price if prices is None else prices
    n = tree.n_nodes
    cash = np.zeros(n)
    hold = np.zeros(n)
    for i in range(n):
        c0, h0 = (x, 0.0) if i == 0 else (cash[tree.parent[i]], hold[tree.parent[i]])
        d = -h0 if tree.is_leaf[i] else trades[i]
        cash[i] = c0 - s[i] * max(d, 0.0) + (1 - lam) * s[i] * max(-d, 0.0)
        hold[i] = h0 + d
    full = trades.copy()
    full[tree.leaves] = -hold[tree.parent[tree.leaves]]
    hold[tree.leaves] = 0.0
    return cash, hold, full


def _ancestor_columns(tree):
    col = -np.ones(tree.n_nodes, dtype=np.int64)
    col[tree.interior] = np.arange(tree.interior.size)
    anc = {}
    for n in range(tree.n_nodes):
        p = n if not tree.is_leaf[n] else tree.parent[n]
        anc[n] = [m for m in tree.ancestors(p)]
    return col, anc


def _primal_program(tree, lam, x):
    """Constraint rows ``G v + h >= 0`` over ``v = [b, s, g]``."""
    ni, nl = tree.interior.size, tree.leaves.size
    nv = 2 * ni + nl
    col, anc = _ancestor_columns(tree)
    S = tree.price
    rows, cols, vals, h = [], [], [], []
    r = 0

    def add(entries, const):
        nonlocal r
        for c, v in entries:
            rows.append(r)
            cols.append(c)
            vals.append(v)
        h.append(const)
        r += 1

    for k in range(nv):
        add([(k, 1.0)], 0.0)
    n_bounds = r
    for n in tree.interior:
        for price in ((1 - lam) * S[n], S[n]):
            e = []
            for m in anc[n]:
                e.append((col[m], price - S[m]))
                e.append((ni + col[m], (1 - lam) * S[m] - price))
            add(e, x)
    n_adm = r
    for j, leaf in enumerate(tree.leaves):
        for price in ((1 - lam) * S[leaf], S[leaf]):
            e = []
            for m in anc[leaf]:
                e.append((col[m], price - S[m]))
                e.append((ni + col[m], (1 - lam) * S[m] - price))
            e.append((2 * ni + j, -1.0))
            add(e, x)
    G = sparse.csr_matrix((vals, (rows, cols)), shape=(r, nv))
    return G, np.array(h), (n_bounds, n_adm)


def _leaf_objective(utility, probs, offset):
    """``-sum p U(g)`` on the trailing block ``v[offset:]``."""

    def fun(v):
        g = v[offset:]
        if np.any(g <= 0):
            return np.inf, None, None
        val = -float(np.dot(probs, utility.u(g)))
        grad = np.zeros(v.size)
        grad[offset:] = -probs * utility.u_prime(g)
        d = np.zeros(v.size)
        d[offset:] = -probs * utility.u_second(g)
        return val, grad, sparse.diags(d)

    return fun


def _check_inputs(tree, utility, x, tol):
    if not isinstance(tree, ScenarioTree):
        raise TypeError("tree must be a ScenarioTree")
    if not isinstance(utility, UtilitySpec):
        raise TypeError("utility must be a UtilitySpec")
    x = check_positive(x, "x")
    check_positive(tol, "tol")
    return x


def maximize_utility(tree, cost, utility, x=1.0, tol=1e-8):
    """Maximise ``E[U(V^liq_T)]`` over admissible self-financing strategies.

    Parameters
    ----------
    tree : ScenarioTree
    cost : CostSpec or float
        Proportional cost ``lambda`` in ``[0, 1)``.
    utility : UtilitySpec
    x : float
        Initial cash.
    tol : float
        Bound on the KKT stationarity residual.

    Returns
    -------
    OptimizationResult

    Raises
    ------
    SolverError
        If the residual cannot be brought below ``tol`` or the utility is
        unbounded on the tree.
    """
    x = _check_inputs(tree, utility, x, tol)
    lam = _lam(cost)
    if not 0.0 <= lam < 1.0:
        raise ValueError("cost must lie in [0, 1)")
    if lam == 0.0:
        res = frictionless_optimize(tree, utility, x, tol)
        res.method = "frictionless-newton"
        return res
    ni, nl = tree.interior.size, tree.leaves.size
    G, h, (n_bounds, n_adm) = _primal_program(tree, lam, x)
    probs = tree.abs_prob[tree.leaves]
    fun = _leaf_objective(utility, probs, 2 * ni)

    eps = 1e-3 * x / (tree.price.max() * tree.depth)
    v0 = np.concatenate([np.full(2 * ni, eps), np.zeros(nl)])
    r0 = G @ v0 + h
    hyp = r0[n_adm:].reshape(nl, 2).min(axis=1)
    v0[2 * ni:] = 0.5 * hyp
    bar = barrier_solve(fun, G, h, v0)
    polished = active_set_polish(fun, G, h, bar.v, bar.multipliers)
    if polished is not None:
        v, mult, resid = polished
        method = "barrier+active-set"
    else:
        v, mult = bar.v, bar.multipliers
        grad = fun(v)[1]
        resid = max(float(np.max(np.abs(grad - G.T @ mult))), bar.gap)
        method = "barrier"
    if resid > tol:
        raise SolverError(f"KKT residual {resid:.3e} exceeds tol {tol:.1e}")

    b, s = v[:ni].copy(), v[ni: 2 * ni].copy()
    if polished is not None:
        # active bounds hold exactly, up to rounding in the Newton step
        b[mult[:ni] > 0] = 0.0
        s[mult[ni: 2 * ni] > 0] = 0.0
    trades = np.zeros(tree.n_nodes)
    trades[tree.interior] = b - s
    return _finish(tree, trades, lam, x, utility, resid, method, bar.newton_steps,
                   float(np.max(mult[n_bounds:n_adm], initial=0.0)))


def _finish(tree, trades, lam, x, utility, resid, method, iters, adm_mult, prices=None):
    cash, hold, full = _state_from_trades(tree, trades, lam, x, prices)
    s = tree.price if prices is None else prices
    liq = cash + np.where(hold > 0, (1 - lam) * s * hold, s * hold)
    g = cash[tree.leaves]
    if np.any(g <= WEALTH_FLOOR):
        raise SolverError(f"terminal wealth {g.min():.3e} does not clear the floor {WEALTH_FLOOR}")
    if np.any(liq[tree.interior] < -1e-9 * x):
        raise SolverError("solution violates admissibility")
    value = float(np.dot(tree.abs_prob[tree.leaves], utility.u(g)))
    return OptimizationResult(
        holdings=hold,
        cash=cash,
        trades=full,
        terminal_wealth=g,
        value=value,
        residual=float(resid),
        x=x,
        lam=lam,
        method=method,
        iterations=int(iters),
        admissibility_multiplier=adm_mult,
    )


def _increment_matrix(tree, prices):
    """``A[l, m] = P_{child of m towards l} - P_m`` so leaf wealth is ``x + A theta``."""
    col = -np.ones(tree.n_nodes, dtype=np.int64)
    col[tree.interior] = np.arange(tree.interior.size)
    A = np.zeros((tree.leaves.size, tree.interior.size))
    for j, leaf in enumerate(tree.leaves):
        path = tree.ancestors(leaf)
        for m, c in zip(path[:-1], path[1:]):
            A[j, col[m]] = prices[c] - prices[m]
    return A


def frictionless_optimize(tree, utility, x=1.0, tol=1e-8, prices=None, max_iter=500):
    """Maximise expected utility when the stock trades at ``prices`` without costs.

    ``prices`` defaults to the tree prices; pass a shadow price to re-solve
    on it. Raises :class:`SolverError` if some node offers an arbitrage.
    """
    x = _check_inputs(tree, utility, x, tol)
    p = tree.price if prices is None else np.asarray(prices, dtype=float)
    if p.shape != tree.price.shape or np.any(p <= 0):
        raise ValueError("prices must be positive, one per node")
    live = np.ones(tree.interior.size, dtype=bool)
    for k, n in enumerate(tree.interior):
        d = p[tree.children[n]] - p[n]
        scale = 1e-14 * p[n]
        if np.all(np.abs(d) <= scale):
            live[k] = False
        elif np.all(d >= -scale) or np.all(d <= scale):
            raise SolverError(f"utility unbounded: price at node {n} admits an arbitrage")
    A = _increment_matrix(tree, p)[:, live]
    probs = tree.abs_prob[tree.leaves]
    theta = np.zeros(A.shape[1])

    def objective(th):
        g = x + A @ th
        return -np.inf if np.any(g <= 0) else float(probs @ utility.u(g))

    it = 0
    grad = np.zeros_like(theta)
    for it in range(1, max_iter + 1):
        g = x + A @ theta
        grad = A.T @ (probs * utility.u_prime(g))
        H = A.T @ ((probs * utility.u_second(g))[:, None] * A)
        try:
            d = np.linalg.solve(-H, grad)
        except np.linalg.LinAlgError:
            d = np.linalg.lstsq(-H, grad, rcond=None)[0]
        dec = float(grad @ d)
        if dec <= 1e-30 or np.max(np.abs(grad)) <= 1e-16:
            break
        f0 = objective(theta)
        step = 1.0
        while step > 1e-16:
            f1 = objective(theta + step * d)
            if f1 >= f0 + 0.25 * step * dec or (dec < 1e-12 and np.isfinite(f1)):
                break
            step *= 0.5
        theta = theta + step * d
        if step * np.max(np.abs(d)) <= 1e-16 * max(1.0, np.max(np.abs(theta))):
            break
    resid = float(np.max(np.abs(grad), initial=0.0))
    if resid > tol:
        raise SolverError(f"frictionless Newton residual {resid:.3e} exceeds tol {tol:.1e}")
    full = np.zeros(tree.interior.size)
    full[live] = theta
    hold_int = np.zeros(tree.n_nodes)
    hold_int[tree.interior] = full
    trades = np.zeros(tree.n_nodes)
    trades[tree.interior] = hold_int[tree.interior] - np.where(
        tree.interior == 0, 0.0, hold_int[tree.parent[tree.interior]]
    )
    return _finish(tree, trades, 0.0, x, utility, resid, "frictionless-newton", it, 0.0, prices=p)


class TreeUtilityMaximizer(BaseEstimator):
    """Estimator wrapper: ``fit(tree)`` solves the problem and extracts a shadow price.

    Attributes
    ----------
    result_ : OptimizationResult
    shadow_ : ShadowReport
    """

    def __init__(self, lam=0.01, utility="log", alpha=None, x=1.0, tol=1e-8):
        self.lam = lam
        self.utility = utility
        self.alpha = alpha
        self.x = x
        self.tol = tol

    def _utility(self):
        if isinstance(self.utility, UtilitySpec):
            return self.utility
        return UtilitySpec.from_name(self.utility, self.alpha)

    def fit(self, tree, y=None):
        from .shadow import extract_shadow

        u = self._utility()
        self.result_ = maximize_utility(tree, CostSpec(self.lam) if self.lam > 0 else 0.0, u, self.x, self.tol)
        self.shadow_ = extract_shadow(tree, self.lam, u, self.result_)
        return self

    def predict(self, tree):
        """Optimal post-trade holdings per node."""
        return self.result_.holdings

    def score(self, tree, y=None):
        return self.result_.value


def save_result(path, result, report=None, meta=None):
    data = {"result": result.to_dict()}
    if report is not None:
        data["shadow"] = report.to_dict()
    if meta:
        data["meta"] = meta
    with open(path, "w") as fh:
        fh.write(dumps(data))
