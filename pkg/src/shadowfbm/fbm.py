"""
Exact sampling of fractional Brownian motion and the fractional
Black-Scholes price process on finite time grids.

Two exact samplers are provided:

* ``cholesky`` factorises the covariance matrix of the grid values and
  works on any grid (O(n^3) setup);
* ``circulant`` embeds the covariance of the increments of an equally
  spaced grid into a circulant matrix and diagonalises it with the FFT
  (Davies-Harte), O(n log n) per path.

Every path ``i`` draws its normals from its own Philox substream keyed by
``(seed, i)``, so batches can be produced in any order or in parallel and
still agree with sequential generation.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_hurst, check_paths, check_points, check_positive, check_seed

CHOLESKY_JITTER = 1e-12
CIRCULANT_TOL = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time points ``0 = t_0 < ... < t_n = T``."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", check_points(self.points))

    @classmethod
    def uniform(cls, horizon, n_steps):
        horizon = check_positive(horizon, "horizon")
        if int(n_steps) < 1:
            raise ValueError("n_steps must be >= 1")
        return cls(np.linspace(0.0, horizon, int(n_steps) + 1))

    @property
    def horizon(self):
        return float(self.points[-1])

    @property
    def n_steps(self):
        return self.points.size - 1

    def __len__(self):
        return self.points.size

    def is_uniform(self, rtol=1e-9):
        dt = np.diff(self.points)
        return bool(np.allclose(dt, dt[0], rtol=rtol, atol=0.0))


@dataclass(frozen=True)
class GaussianPath:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.points.shape:
            raise ValueError("path values must match the grid length")
        if not np.all(np.isfinite(vals)):
            raise ValueError("path values must be finite")
        if vals[0] != 0.0:
            raise ValueError("a Gaussian path must start at 0")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class ModelSpec:
    """Fractional Black-Scholes model ``S_t = exp(mu t + sigma B^H_t)``."""

    mu: float
    sigma: float
    hurst: float
    horizon: float

    def __post_init__(self):
        check_positive(self.sigma, "sigma")
        check_positive(self.horizon, "horizon")
        check_hurst(self.hurst)
        if not np.isfinite(self.mu):
            raise ValueError("mu must be finite")


@dataclass(frozen=True)
class PricePath:
    grid: TimeGrid
    prices: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.prices, dtype=float)
        if p.shape != self.grid.points.shape:
            raise ValueError("prices must match the grid length")
        if not np.all(p > 0) or not np.all(np.isfinite(p)):
            raise ValueError("prices must be finite and strictly positive")
        object.__setattr__(self, "prices", p)


def _as_grid(grid):
    return grid if isinstance(grid, TimeGrid) else TimeGrid(np.asarray(grid, dtype=float))


def fbm_covariance(s, t, hurst):
    """Covariance ``Cov(B_s, B_t)`` of standard fractional Brownian motion.

    Works elementwise on arrays. Negative times raise ``ValueError``.
    """
    h2 = 2.0 * check_hurst(hurst)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise ValueError("fbm_covariance is defined for non-negative times only")
    out = 0.5 * (s**h2 + t**h2 - np.abs(t - s) ** h2)
    return out[()] if out.ndim == 0 else out


def covariance_matrix(points, hurst):
    """Covariance matrix of ``(B_t)`` at the given time points."""
    pts = np.asarray(points, dtype=float)
    return fbm_covariance(pts[:, None], pts[None, :], hurst)


def substream(seed, index):
    """Generator for path ``index`` of the run keyed by ``seed``.

    The path index occupies the top word of Philox's 256-bit counter, so
    substreams never overlap for any realistic number of draws.
    """
    return np.random.Generator(
        np.random.Philox(key=check_seed(seed), counter=[0, 0, 0, int(index)])
    )


def _cholesky_factor(points, hurst):
    cov = covariance_matrix(points[1:], hurst)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    jitter = CHOLESKY_JITTER * float(np.max(np.diag(cov)))
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "fBm covariance is not numerically positive definite on the grid "
            f"with {points.size} points, horizon {points[-1]:g}, minimal spacing "
            f"{np.min(np.diff(points)):.3g} (H={hurst:g}), even after jitter "
            f"{jitter:.3g}"
        ) from None


def _circulant_sqrt_eigs(n_steps, dt, hurst):
    h2 = 2.0 * hurst
    k = np.arange(n_steps + 1, dtype=float)
    # autocovariance of fractional Gaussian noise with step dt
    r = 0.5 * dt**h2 * (np.abs(k + 1) ** h2 - 2 * k**h2 + np.abs(k - 1) ** h2)
    row = np.concatenate([r, r[-2:0:-1]])
    eigs = np.fft.fft(row).real
    floor = -CIRCULANT_TOL * max(float(np.max(np.abs(eigs))), 1.0)
    if np.min(eigs) < floor:
        raise np.linalg.LinAlgError(
            f"circulant embedding has a negative eigenvalue {np.min(eigs):.3g} "
            f"(n_steps={n_steps}, H={hurst:g}); use method='cholesky'"
        )
    return np.sqrt(np.clip(eigs, 0.0, None) / row.size)


class FBMSampler(BaseEstimator):
    """Exact sampler of standard fractional Brownian motion on a grid.

    Parameters
    ----------
    hurst : float
        Hurst parameter in (0, 1]. ``hurst=1`` is the degenerate case
        ``B_t = t Z`` and is sampled directly.
    method : {"cholesky", "circulant"}
        Factorisation used. ``circulant`` requires an equally spaced grid.
    seed : int
        64-bit key of the counter-based generator.

    Attributes
    ----------
    grid_ : TimeGrid
        Grid passed to :meth:`fit`.
    factor_ : ndarray
        Lower Cholesky factor of the covariance at ``grid_[1:]`` or the
        square roots of the scaled circulant eigenvalues.
    """

    def __init__(self, hurst=0.5, method="cholesky", seed=0):
        self.hurst = hurst
        self.method = method
        self.seed = seed

    def fit(self, grid, y=None):
        grid = _as_grid(grid)
        hurst = check_hurst(self.hurst)
        check_seed(self.seed)
        if self.method not in ("cholesky", "circulant"):
            raise ValueError(f"unknown method {self.method!r}")
        self.grid_ = grid
        if hurst == 1.0:
            self.factor_ = grid.points[1:].copy()
        elif self.method == "cholesky":
            self.factor_ = _cholesky_factor(grid.points, hurst)
        else:
            if not grid.is_uniform():
                raise ValueError("the circulant sampler needs an equally spaced grid")
            dt = grid.horizon / grid.n_steps
            self.factor_ = _circulant_sqrt_eigs(grid.n_steps, dt, hurst)
        return self

    def _draw_one(self, index):
        rng = substream(self.seed, index)
        n = self.grid_.n_steps
        if float(self.hurst) == 1.0:
            return self.factor_ * rng.standard_normal()
        if self.method == "cholesky":
            return self.factor_ @ rng.standard_normal(n)
        m = self.factor_.size
        z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        noise = np.fft.fft(self.factor_ * z).real[:n]
        return np.cumsum(noise)

    def sample(self, n_paths, start=0):
        """Draw paths ``start, ..., start + n_paths - 1``.

        Returns an array of shape ``(n_paths, len(grid))`` whose first column
        is zero.
        """
        if not hasattr(self, "factor_"):
            raise RuntimeError("FBMSampler is not fitted; call fit(grid) first")
        n_paths = int(n_paths)
        if n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        out = np.zeros((n_paths, len(self.grid_)))
        for row in range(n_paths):
            out[row, 1:] = self._draw_one(start + row)
        return out

    def iter_batches(self, n_paths, batch_size=4096):
        """Yield consecutive batches covering ``n_paths`` paths."""
        for start in range(0, int(n_paths), batch_size):
            yield self.sample(min(batch_size, n_paths - start), start=start)


def sample_fbm_paths(grid, hurst, n_paths, seed, method="cholesky"):
    """Sample ``n_paths`` fBm trajectories on ``grid``; rows are paths."""
    return FBMSampler(hurst=hurst, method=method, seed=seed).fit(grid).sample(n_paths)


def _check_horizon(grid, model):
    if not np.isclose(grid.horizon, model.horizon, rtol=1e-12, atol=0.0):
        raise ValueError(
            f"path horizon {grid.horizon:g} does not match model horizon {model.horizon:g}"
        )


def log_price_path(path, model):
    """``X_t = mu t + sigma B_t`` pointwise.

    ``path`` is a :class:`GaussianPath`, or a ``(grid, values)`` pair where
    ``values`` may be a 2-d batch of paths.
    """
    grid, values = (path.grid, path.values) if isinstance(path, GaussianPath) else path
    grid = _as_grid(grid)
    _check_horizon(grid, model)
    values = np.asarray(values, dtype=float)
    return model.mu * grid.points + model.sigma * values


def fbs_price_path(path, model):
    """Fractional Black-Scholes prices ``exp(X_t)`` as a :class:`PricePath`."""
    grid = path.grid if isinstance(path, GaussianPath) else _as_grid(path[0])
    x = log_price_path(path, model)
    if x.ndim != 1:
        raise ValueError("fbs_price_path takes a single path; use fbs_prices for batches")
    return PricePath(grid, _safe_exp(x))


def fbs_prices(grid, paths, model):
    """Batch version of :func:`fbs_price_path` returning an array."""
    grid = _as_grid(grid)
    paths = check_paths(paths, len(grid))
    return _safe_exp(log_price_path((grid, paths), model))


def _safe_exp(x):
    hi = float(np.max(np.abs(x)))
    if hi > 700.0:
        raise OverflowError(f"log-price {hi:.6g} is too extreme to exponentiate")
    return np.exp(x)
