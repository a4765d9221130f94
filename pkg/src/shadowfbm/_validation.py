"""Input validation helpers shared by the estimators and functions."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_hurst(hurst):
    """Return ``hurst`` as a float in (0, 1] or raise ``ValueError``."""
    if not isinstance(hurst, numbers.Real) or not (0.0 < float(hurst) <= 1.0):
        raise ValueError(f"Hurst parameter must lie in (0, 1], got {hurst!r}")
    return float(hurst)


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_cost(lam, allow_zero=False):
    """Validate a proportional cost level."""
    lam = float(lam)
    lo_ok = lam >= 0.0 if allow_zero else lam > 0.0
    if not (lo_ok and lam < 1.0):
        bound = "[0, 1)" if allow_zero else "(0, 1)"
        raise ValueError(f"transaction cost lambda must lie in {bound}, got {lam!r}")
    return lam


def check_points(points):
    """Validate a time grid: 1-d, finite, strictly increasing, starting at 0."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 1 or pts.size < 2:
        raise ValueError("a time grid needs at least two points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("time grid contains non-finite values")
    if pts[0] != 0.0:
        raise ValueError(f"time grid must start at 0, got {pts[0]!r}")
    if np.any(np.diff(pts) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return pts


def check_paths(paths, n_points=None):
    """Coerce a batch of sampled paths to a 2-d float array (n_paths, n_points)."""
    arr = np.asarray(paths, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    arr = check_array(arr, ensure_2d=True, dtype=float, ensure_min_features=1)
    if n_points is not None and arr.shape[1] != n_points:
        raise ValueError(
            f"paths have {arr.shape[1]} points but the grid has {n_points}"
        )
    return arr


def check_seed(seed):
    if not isinstance(seed, numbers.Integral) or seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)
