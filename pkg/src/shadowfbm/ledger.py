"""Bond/stock accounting under proportional transaction costs.

Stock is bought at the ask ``S`` and sold at the bid ``(1 - lambda) S``; the
bond is normalised to one. Trades happen at grid times only and cash obeys
the self-financing condition with equality.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_cost, check_positive
from .fbm import PricePath, _as_grid


@dataclass(frozen=True)
class CostSpec:
    lam: float

    def __post_init__(self):
        check_cost(self.lam)


@dataclass
class TradingStrategy:
    """Holdings indexed by ``{0-} U grid``: entry 0 is the initial endowment.

    ``phi0[k + 1]``, ``phi1[k + 1]`` are the positions after trading at grid
    time ``k``.
    """

    grid: object
    phi0: np.ndarray
    phi1: np.ndarray

    def __post_init__(self):
        self.grid = _as_grid(self.grid)
        self.phi0 = np.asarray(self.phi0, dtype=float)
        self.phi1 = np.asarray(self.phi1, dtype=float)
        n = len(self.grid) + 1
        if self.phi0.shape != (n,) or self.phi1.shape != (n,):
            raise ValueError(f"holdings must have length len(grid) + 1 = {n}")
        if self.phi1[0] != 0.0 or not self.phi0[0] > 0:
            raise ValueError("strategies start from the endowment (x, 0) with x > 0")

    @property
    def x(self):
        return float(self.phi0[0])

    @property
    def trades(self):
        return np.diff(self.phi1)

    def jordan_hahn(self):
        """Cumulative buys and sells, both non-decreasing from zero."""
        d = self.trades
        buys = np.concatenate([[0.0], np.cumsum(np.clip(d, 0.0, None))])
        sells = np.concatenate([[0.0], np.cumsum(np.clip(-d, 0.0, None))])
        return buys, sells


@dataclass
class PortfolioValue:
    liq: float
    opt: float
    time: float


@dataclass
class AdmissibilityReport:
    admissible: bool
    first_violation: float | None


def _lam(cost):
    return cost.lam if isinstance(cost, CostSpec) else check_cost(cost, allow_zero=True)


def _prices(prices):
    return prices.prices if isinstance(prices, PricePath) else np.asarray(prices, dtype=float)


def cash_change(trade, price, cost):
    """Cash increment for buying ``trade > 0`` or selling ``trade < 0`` shares."""
    lam = _lam(cost)
    trade = np.asarray(trade, dtype=float)
    return -price * np.clip(trade, 0.0, None) + (1.0 - lam) * price * np.clip(-trade, 0.0, None)


def settle(trades, prices, cost, x):
    """Build the self-financing strategy generated by per-time stock trades.

    ``trades[k]`` is the (netted) change in stock holdings at grid time k.
    """
    x = check_positive(x, "initial cash x")
    s = _prices(prices)
    trades = np.asarray(trades, dtype=float)
    if trades.shape != s.shape:
        raise ValueError("trades and prices must share the grid")
    grid = prices.grid if isinstance(prices, PricePath) else np.arange(s.size, dtype=float)
    phi1 = np.concatenate([[0.0], np.cumsum(trades)])
    phi0 = np.concatenate([[x], x + np.cumsum(cash_change(trades, s, cost))])
    return TradingStrategy(grid, phi0, phi1)


def liquidation_value(phi0, phi1, price, cost):
    """``phi0 + (phi1)^+ (1 - lambda) S - (phi1)^- S``; works on arrays."""
    lam = _lam(cost)
    phi1 = np.asarray(phi1, dtype=float)
    return phi0 + np.clip(phi1, 0, None) * (1 - lam) * price - np.clip(-phi1, 0, None) * price


def optimistic_value(phi0, phi1, price, cost):
    """``phi0 + (phi1)^+ S - (phi1)^- (1 - lambda) S``; works on arrays."""
    lam = _lam(cost)
    phi1 = np.asarray(phi1, dtype=float)
    return phi0 + np.clip(phi1, 0, None) * price - np.clip(-phi1, 0, None) * (1 - lam) * price


def value_path(strategy, prices, cost):
    """Liquidation and optimistic values after trading at each grid time."""
    s = _prices(prices)
    liq = liquidation_value(strategy.phi0[1:], strategy.phi1[1:], s, cost)
    opt = optimistic_value(strategy.phi0[1:], strategy.phi1[1:], s, cost)
    return [PortfolioValue(float(a), float(b), float(t)) for a, b, t in zip(liq, opt, strategy.grid.points)]


def check_admissible(strategy, prices, cost, atol=0.0):
    """``V^liq >= 0`` at every grid time; reports the first violating time."""
    s = _prices(prices)
    liq = liquidation_value(strategy.phi0[1:], strategy.phi1[1:], s, cost)
    bad = np.flatnonzero(liq < -atol)
    if bad.size == 0:
        return AdmissibilityReport(True, None)
    return AdmissibilityReport(False, float(strategy.grid.points[bad[0]]))
