"""
delta-fluctuation times and counts of sampled paths, the Gaussian-type tail
bound on the counts, Monte Carlo tail curves, and moment estimates.

Crossings are detected on the grid: a fluctuation time is the first grid
point at which the displacement from the previous fluctuation value reaches
``delta``. There is no interpolation between grid points.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_hurst, check_paths, check_positive
from .fbm import FBMSampler, ModelSpec, _as_grid

MIN_HITS = 5


@dataclass
class FluctuationRecord:
    delta: float
    times: np.ndarray
    count: int


@dataclass(frozen=True)
class TailBoundParams:
    c: float
    c_prime: float
    hurst: float

    def __post_init__(self):
        check_positive(self.c, "c")
        check_positive(self.c_prime, "c_prime")
        check_hurst(self.hurst)


@dataclass
class TailCurve:
    """Empirical tail ``P[F >= n]`` for ``n = 1..n_max``."""

    n_values: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray
    hits: np.ndarray
    n_paths: int
    delta: float
    horizon: float
    hurst: float
    seed: int = 0
    counts: np.ndarray = field(default=None, repr=False)

    @property
    def reliable(self):
        return self.hits >= MIN_HITS


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    r_squared: float
    n_used: int
    hurst: float
    majorant_intercept: float = np.nan

    def majorant(self, n):
        """Bound curve ``exp(-majorant_intercept - slope * n**p)``."""
        x = np.asarray(n, dtype=float) ** tail_exponent(self.hurst)
        return np.exp(-self.majorant_intercept - self.slope * x)


def tail_exponent(hurst):
    """Power of ``n`` in the tail bound: ``1 + min(2H, 1)``."""
    return 1.0 + min(2.0 * check_hurst(hurst), 1.0)


def fluctuation_times(values, delta, grid=None):
    """Fluctuation times of a single path.

    Parameters
    ----------
    values : array-like
        Path values on the grid.
    delta : float
        Fluctuation size, > 0.
    grid : TimeGrid or array-like, optional
        Time points; defaults to ``0, 1, 2, ...``.
    """
    delta = _check_delta(delta)
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or not np.all(np.isfinite(v)):
        raise ValueError("values must be a finite 1-d sequence")
    t = np.arange(v.size, dtype=float) if grid is None else _as_grid(grid).points
    if t.size != v.size:
        raise ValueError("grid and values differ in length")
    idx = [0]
    anchor = v[0]
    for k in range(1, v.size):
        if abs(v[k] - anchor) >= delta:
            idx.append(k)
            anchor = v[k]
    return FluctuationRecord(delta=delta, times=t[idx], count=len(idx) - 1)


def fluctuation_counts(paths, delta):
    """Fluctuation counts for a batch of paths (rows), vectorised over rows."""
    delta = _check_delta(delta)
    x = check_paths(paths)
    anchor = x[:, 0].copy()
    count = np.zeros(x.shape[0], dtype=np.int64)
    for k in range(1, x.shape[1]):
        col = x[:, k]
        hit = np.abs(col - anchor) >= delta
        anchor[hit] = col[hit]
        count += hit
    return count


class FluctuationCounter(TransformerMixin, BaseEstimator):
    """Transform a batch of paths into their delta-fluctuation counts.

    ``transform`` returns a column vector so the counter composes with
    scikit-learn pipelines.
    """

    def __init__(self, delta=0.1):
        self.delta = delta

    def fit(self, X=None, y=None):
        self.delta_ = _check_delta(self.delta)
        return self

    def transform(self, X):
        check_is_fitted(self, "delta_")
        return fluctuation_counts(X, self.delta_)[:, None]


def drift_budget(mu, horizon, delta):
    """``floor(2|mu| T / delta) + 1``: fluctuations of size delta/2 a linear drift can make."""
    delta = _check_delta(delta)
    horizon = check_positive(horizon, "horizon")
    return int(np.floor(2.0 * abs(mu) * horizon / delta)) + 1


def tail_bound_rhs(n, delta, horizon, params):
    """``C' exp(-delta^2 T^{-2H} n^{1 + (2H ^ 1)} / C)``."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 1):
        raise ValueError("tail bound is stated for n >= 1")
    arg = delta**2 * horizon ** (-2.0 * params.hurst) * n ** tail_exponent(params.hurst)
    out = params.c_prime * np.exp(-arg / params.c)
    return out[()] if out.ndim == 0 else out


def tail_curve_from_counts(counts, n_max, delta, horizon, hurst, seed=0):
    counts = np.asarray(counts, dtype=np.int64)
    n_paths = counts.size
    n_values = np.arange(1, int(n_max) + 1)
    hits = np.array([(counts >= n).sum() for n in n_values], dtype=np.int64)
    p = hits / n_paths
    return TailCurve(
        n_values=n_values,
        estimates=p,
        stderr=np.sqrt(p * (1.0 - p) / n_paths),
        hits=hits,
        n_paths=n_paths,
        delta=float(delta),
        horizon=float(horizon),
        hurst=float(hurst),
        seed=int(seed),
        counts=counts,
    )


def mc_counts(hurst_or_model, grid, delta, n_paths, seed, method=None, batch_size=4096):
    """Monte Carlo fluctuation counts.

    With a float Hurst parameter the counts are those of standard fBm; with a
    :class:`ModelSpec` they are those of the log-price ``mu t + sigma B``.
    """
    grid = _as_grid(grid)
    model = hurst_or_model if isinstance(hurst_or_model, ModelSpec) else None
    hurst = model.hurst if model else check_hurst(hurst_or_model)
    if method is None:
        method = "circulant" if grid.is_uniform() else "cholesky"
    sampler = FBMSampler(hurst=hurst, method=method, seed=seed).fit(grid)
    parts = []
    for batch in sampler.iter_batches(n_paths, batch_size):
        if model is not None:
            batch = model.mu * grid.points + model.sigma * batch
        parts.append(fluctuation_counts(batch, delta))
    return np.concatenate(parts)


def mc_tail_curve(hurst_or_model, grid, delta, n_max, n_paths, seed, method=None):
    """Empirical tail curve ``P[F >= n]`` from ``n_paths`` sampled paths."""
    if n_paths < 100:
        raise ValueError("mc_tail_curve needs at least 100 paths")
    grid = _as_grid(grid)
    counts = mc_counts(hurst_or_model, grid, delta, n_paths, seed, method)
    hurst = getattr(hurst_or_model, "hurst", hurst_or_model)
    return tail_curve_from_counts(counts, n_max, delta, grid.horizon, hurst, seed)


class TailLawRegressor(RegressorMixin, BaseEstimator):
    """Least-squares fit of ``-log P[F >= n]`` against ``n^{1 + (2H ^ 1)}``.

    ``fit(n, p)`` keeps points with ``0 < p < 1`` (and, if ``hits`` is given,
    at least five hits). ``predict`` returns fitted tail probabilities.
    """

    def __init__(self, hurst=0.5):
        self.hurst = hurst

    def fit(self, X, y, hits=None):
        n = np.asarray(X, dtype=float).ravel()
        p = np.asarray(y, dtype=float).ravel()
        keep = (p > 0) & (p < 1)
        if hits is not None:
            keep &= np.asarray(hits) >= MIN_HITS
        if keep.sum() < 3:
            raise ValueError(
                f"only {int(keep.sum())} usable tail points (need 3); sample more paths"
            )
        x = n[keep] ** tail_exponent(self.hurst)
        z = -np.log(p[keep])
        slope, intercept = np.polyfit(x, z, 1)
        resid = z - (slope * x + intercept)
        ss_tot = float(np.sum((z - z.mean()) ** 2))
        ss_res = float(np.sum(resid**2))
        self.slope_ = float(slope)
        self.intercept_ = float(intercept)
        self.r_squared_ = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
        self.n_used_ = int(keep.sum())
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        x = np.asarray(X, dtype=float).ravel() ** tail_exponent(self.hurst)
        return np.exp(-(self.slope_ * x + self.intercept_))

    def score(self, X, y, sample_weight=None):
        check_is_fitted(self, "r_squared_")
        return self.r_squared_


def scaling_fit(curve):
    """Fit the tail law to a :class:`TailCurve`.

    Besides the least-squares slope and intercept, the returned fit carries a
    majorising intercept: the largest shift of the fitted line that keeps the
    bound curve above every estimate whose relative standard error is below
    25%.
    """
    reg = TailLawRegressor(hurst=curve.hurst).fit(curve.n_values, curve.estimates, curve.hits)
    p = curve.estimates
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(p > 0, curve.stderr / p, np.inf)
    sharp = (rel < 0.25) & (p > 0)
    x = curve.n_values.astype(float) ** tail_exponent(curve.hurst)
    if sharp.any():
        major = float(np.min(-np.log(p[sharp]) - reg.slope_ * x[sharp]))
        major = min(major, reg.intercept_)
    else:
        major = reg.intercept_
    return ScalingFit(
        slope=reg.slope_,
        intercept=reg.intercept_,
        r_squared=reg.r_squared_,
        n_used=reg.n_used_,
        hurst=curve.hurst,
        majorant_intercept=major,
    )


@dataclass
class MomentEstimate:
    estimate: float
    standard_error: float


def moment_estimates(counts, a, kind="exponential"):
    """Sample mean of ``exp(a F)`` or ``exp(a F^2)`` with jackknife standard error."""
    f = np.asarray(counts, dtype=float).ravel()
    if f.size == 0:
        raise ValueError("counts must be non-empty")
    if kind == "exponential":
        arg = a * f
    elif kind == "gaussian":
        arg = a * f**2
    else:
        raise ValueError(f"unknown moment kind {kind!r}")
    if np.max(arg) > 709.0:
        raise OverflowError(
            f"exp({kind}) moment overflows: largest count {int(f.max())} with a={a:g}"
        )
    vals = np.exp(arg)
    n = vals.size
    est = float(vals.mean())
    if n < 2:
        return MomentEstimate(est, float("nan"))
    loo = (vals.sum() - vals) / (n - 1)
    se = float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))
    return MomentEstimate(est, se)


def _check_delta(delta):
    return check_positive(delta, "delta")
