"""
Pathwise bound on terminal wealth under proportional costs.

Between two consecutive delta-fluctuation times of the log-price, a
clairvoyant trader can multiply the optimistic value of the portfolio by at
most ``K(lambda, delta)`` provided ``(1 - lambda) e^{2 delta} < 1``. Hence
the terminal cash of any admissible strategy is at most ``x K^n`` on paths
with ``n`` fluctuations. ``dp_oracle_best_terminal`` computes the best
clairvoyant terminal cash on a discretised holdings grid by exact dynamic
programming, as an independent check of the bound.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_cost, check_positive
from .fbm import PricePath
from .fluctuation import fluctuation_counts, fluctuation_times

MAX_GRID_POINTS = 64
MAX_HOLDING_LEVELS = 512


@dataclass(frozen=True)
class BoundParams:
    lam: float
    delta: float

    def __post_init__(self):
        check_cost(self.lam)
        check_positive(self.delta, "delta")
        if self.ratio >= 1.0:
            raise ValueError(
                f"the wealth bound needs (1 - lambda) * exp(2 delta) < 1; got "
                f"{self.ratio:.6g} for lambda={self.lam:g}, delta={self.delta:g}"
            )

    @property
    def ratio(self):
        return (1.0 - self.lam) * np.exp(2.0 * self.delta)


def k_constant(params):
    """``1 - 1/(1 - r) + e^{2 delta}/(1 - r)`` with ``r = (1 - lambda) e^{2 delta}``."""
    denom = 1.0 - params.ratio
    return (1.0 - 1.0 / denom) + np.exp(2.0 * params.delta) / denom


def bound_value(x, n, params):
    x = check_positive(x, "x")
    if np.any(np.asarray(n) < 0):
        raise ValueError("fluctuation count must be >= 0")
    return x * k_constant(params) ** np.asarray(n, dtype=float)


@dataclass
class SegmentValue:
    value: float
    direction: str
    shares: float


def clairvoyant_segment_value(prices, start_value, params, rtol=1e-12):
    """Best optimistic value at the end of one fluctuation interval.

    The trader starts from ``(V, 0)`` and knows the whole segment. Going
    long, the best plan waits for the segment minimum and buys as many
    shares as the relaxed admissibility constraint
    ``phi0 + phi1 (1 - lambda) e^delta S_start >= 0`` allows, then holds.
    The short side is the mirror image (sell at the maximum, constraint
    ``phi0 - phi1 e^delta S_start >= 0``). Round trips inside a segment
    never pay because ``(1 - lambda) e^{2 delta} < 1``.
    """
    s = np.asarray(prices.prices if isinstance(prices, PricePath) else prices, dtype=float)
    v0 = check_positive(start_value, "start_value")
    s0 = s[0]
    band = np.exp(params.delta)
    if np.any(s > s0 * band * (1 + rtol)) or np.any(s < s0 / band * (1 - rtol)):
        raise ValueError(
            "segment leaves [e^-delta, e^delta] times its initial price; "
            "it spans more than one fluctuation interval"
        )
    lam = params.lam
    best = SegmentValue(v0, "none", 0.0)

    i_min = int(np.argmin(s))
    s_min, s_end = s[i_min], s[-1]
    q_long = v0 / (s_min - (1 - lam) * band * s0)
    long_val = v0 + q_long * (s_end - s_min)
    if long_val > best.value:
        best = SegmentValue(float(long_val), "long", float(q_long))

    i_max = int(np.argmax(s))
    s_max = s[i_max]
    q_short = v0 / (band * s0 - (1 - lam) * s_max)
    short_val = v0 + q_short * (1 - lam) * (s_max - s_end)
    if short_val > best.value:
        best = SegmentValue(float(short_val), "short", -float(q_short))
    return best


def _holding_levels(q_max, levels):
    # odd count keeps 0 on the grid
    n = levels if levels % 2 == 1 else levels - 1
    return np.linspace(-q_max, q_max, n)


def _running_argmax(vals):
    acc = np.maximum.accumulate(vals)
    pos = np.where(vals >= acc, np.arange(vals.size), 0)
    return acc, np.maximum.accumulate(pos)


def _dp_pass(s, lam, x, h):
    """Forward max-plus recursion over holdings levels.

    ``cash[i]`` is the largest cash reachable with holdings ``h[i]`` after
    trading at the current time while staying admissible at every grid time.
    Buying from ``h_j <= h_i`` and selling from ``h_j >= h_i`` are prefix and
    suffix maxima of affine shifts, so each step costs O(levels). Returns the
    optimal terminal value and the holdings along one optimal path.
    """
    n = h.size
    cash = np.full(n, -np.inf)
    cash[n // 2] = x
    parents = []
    for price in s:
        buy, jb = _running_argmax(cash + price * h)
        buy = buy - price * h
        rs, js = _running_argmax((cash + (1 - lam) * price * h)[::-1])
        sell = rs[::-1] - (1 - lam) * price * h
        js = (n - 1 - js)[::-1]
        take_buy = buy >= sell
        cash = np.where(take_buy, buy, sell)
        parents.append(np.where(take_buy, jb, js))
        liq = cash + np.where(h > 0, (1 - lam) * price * h, price * h)
        cash[liq < -1e-12 * max(x, 1.0)] = -np.inf
    terminal = cash + np.where(h > 0, (1 - lam) * s[-1] * h, s[-1] * h)
    i = int(np.argmax(terminal))
    path = [h[i]]
    for par in reversed(parents[1:]):
        i = int(par[i])
        path.append(h[i])
    return float(terminal.max()), np.array(path[::-1])


def dp_oracle_best_terminal(prices, cost, x, holdings_grid_size=511, q_max=None):
    """Maximal terminal liquidation value over strategies on a holdings grid.

    Parameters
    ----------
    prices : PricePath or array-like
        At most 64 grid points.
    cost : float or CostSpec
        Proportional cost.
    x : float
        Initial cash.
    holdings_grid_size : int
        Number of holdings levels, at most 512.
    q_max : float, optional
        Largest absolute holding on the grid. By default it starts at
        ``x / (lambda * min S)`` and is doubled while the best path touches
        the edge.

    Returns
    -------
    float
        A lower bound of the continuum optimum which increases to it as the
        holdings grid is refined.
    """
    s = np.asarray(prices.prices if isinstance(prices, PricePath) else prices, dtype=float)
    lam = float(getattr(cost, "lam", cost))
    x = check_positive(x, "x")
    if s.size > MAX_GRID_POINTS or holdings_grid_size > MAX_HOLDING_LEVELS:
        raise ValueError(
            f"instance too large for the DP oracle: {s.size} grid points "
            f"(max {MAX_GRID_POINTS}), {holdings_grid_size} holdings levels "
            f"(max {MAX_HOLDING_LEVELS})"
        )
    if holdings_grid_size < 3:
        raise ValueError("holdings_grid_size must be >= 3")
    adaptive = q_max is None
    if adaptive:
        q_max = x / (max(lam, 1e-3) * float(np.min(s)))
    best = -np.inf
    for _ in range(12):
        h = _holding_levels(q_max, holdings_grid_size)
        value, path = _dp_pass(s, lam, x, h)
        best = max(best, value)
        if not adaptive or np.max(np.abs(path)) < q_max * (1 - 1e-12):
            break
        q_max *= 2.0
    return best


def segment_bounds(log_prices, delta, grid=None):
    """Indices of the drifted delta-fluctuation times of a log-price path."""
    rec = fluctuation_times(log_prices, delta)
    return np.rint(rec.times).astype(int), rec.count


@dataclass
class BoundViolation:
    path: int
    seed: int
    count: int
    bound: float
    achieved: float

    def to_dict(self):
        return {"path": self.path, "seed": self.seed, "n": self.count, "bound": self.bound, "achieved": self.achieved}


@dataclass
class BoundCheckReport:
    """Outcome of comparing oracle terminal cash with ``x K^n`` over an ensemble."""

    k: float
    counts: np.ndarray
    achieved: np.ndarray
    bounds: np.ndarray
    violations: list
    seed: int = 0

    @property
    def passed(self):
        return not self.violations

    @property
    def max_ratio(self):
        return float(np.max(self.achieved / self.bounds, initial=0.0))

    def to_dict(self):
        return {
            "k": self.k,
            "seed": self.seed,
            "n_paths": int(self.counts.size),
            "max_ratio": self.max_ratio,
            "violations": [v.to_dict() for v in self.violations],
        }


def check_wealth_bound(prices, params, x=1.0, holdings_grid_size=511, seed=0):
    """Oracle terminal cash against ``x K^n`` on every path of an ensemble.

    ``n`` is the delta-fluctuation count of the log-price. Paths are rows of
    ``prices``; violations are recorded with the path index and ``seed``.
    """
    s = np.atleast_2d(np.asarray(prices, dtype=float))
    if np.any(s <= 0):
        raise ValueError("prices must be strictly positive")
    counts = fluctuation_counts(np.log(s), params.delta)
    bounds = bound_value(x, counts, params)
    achieved = np.array([dp_oracle_best_terminal(row, params.lam, x, holdings_grid_size) for row in s])
    bad = [
        BoundViolation(i, int(seed), int(counts[i]), float(bounds[i]), float(achieved[i]))
        for i in np.flatnonzero(achieved > bounds)
    ]
    return BoundCheckReport(float(k_constant(params)), counts, achieved, bounds, bad, int(seed))
