"""
Path-ensemble diagnostics: two way crossing statistics, obvious arbitrage
detection and the construction of consistent price systems.

An ensemble is an array of shape ``(n_paths, n_points)`` on a common time
grid, optionally with path probabilities. It is read as a finite tree:
two paths carry the same information at grid index ``k`` exactly when
their first ``k + 1`` values agree. Stopping times are grid indices.
"""

from dataclasses import dataclass, field
from math import fsum

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_paths, check_positive

# ---------------------------------------------------------------------------
# two way crossing


@dataclass(frozen=True)
class CrossingResult:
    """Grid times of ``sigma`` and of the first strict moves up and down after it.

    Absent entries are None.
    """

    sigma: float = None
    sigma_plus: float = None
    sigma_minus: float = None

    def gap(self, horizon):
        """``|sigma_plus - sigma_minus|`` with absent times at infinity, capped at ``horizon``.

        Both absent (a path that never moves again) counts as no gap.
        """
        if self.sigma is None:
            return 0.0
        if self.sigma_plus is None and self.sigma_minus is None:
            return 0.0
        if self.sigma_plus is None or self.sigma_minus is None:
            return float(horizon)
        return min(abs(self.sigma_plus - self.sigma_minus), float(horizon))


def _times(n_points, times):
    if times is None:
        return np.arange(n_points, dtype=float)
    times = np.asarray(times, dtype=float)
    if times.shape != (n_points,) or np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing with one entry per grid point")
    return times


def _sigma_index(values, rule, times):
    kind, arg = _parse_rule(rule)
    if kind == "fixed_time":
        idx = np.flatnonzero(times >= arg - 1e-12 * max(1.0, abs(arg)))
        return int(idx[0]) if idx.size else None
    level = arg
    if values[0] == level:
        return 0
    hit = values >= level if values[0] < level else values <= level
    idx = np.flatnonzero(hit)
    return int(idx[0]) if idx.size else None


def _parse_rule(rule):
    if isinstance(rule, str):
        name, _, arg = rule.partition(":")
        rule = (name, float(arg) if arg else None)
    kind, arg = rule
    if kind not in ("level_hit", "fixed_time") or arg is None:
        raise ValueError("sigma_rule must be ('level_hit', level) or ('fixed_time', t)")
    return kind, float(arg)


def crossing_times(values, sigma_rule, times=None):
    """First strict up and down moves after a stopping time.

    Parameters
    ----------
    values : array_like, shape (n_points,)
    sigma_rule : tuple or str
        ``("level_hit", c)``: first grid time the path reaches ``c`` from its
        starting side. ``("fixed_time", t)``: first grid time ``>= t``.
        The string forms ``"level_hit:c"`` and ``"fixed_time:t"`` also work.
    times : array_like, optional
        Grid times; defaults to the indices.

    Returns
    -------
    CrossingResult
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size < 1:
        raise ValueError("values must be a non-empty 1-d array")
    times = _times(values.size, times)
    k = _sigma_index(values, sigma_rule, times)
    if k is None:
        return CrossingResult()
    rest = values[k + 1:] - values[k]
    up = np.flatnonzero(rest > 0)
    down = np.flatnonzero(rest < 0)
    return CrossingResult(
        float(times[k]),
        float(times[k + 1 + up[0]]) if up.size else None,
        float(times[k + 1 + down[0]]) if down.size else None,
    )


def twc_curve(paths, sigma_rule, epsilon_grid, times=None):
    """Fraction of paths whose first up and down moves after ``sigma`` are more than ``eps`` apart.

    Returns an array of shape ``(len(epsilon_grid), 2)`` with columns
    ``eps, fraction``. A missing crossing counts as a gap of the full
    horizon, so monotone paths give fraction 1 for every ``eps`` below it.
    """
    paths = check_paths(paths)
    if paths.shape[0] == 0:
        raise ValueError("ensemble is empty")
    eps = np.asarray(epsilon_grid, dtype=float).ravel()
    times = _times(paths.shape[1], times)
    horizon = times[-1] - times[0]
    gaps = np.array([crossing_times(p, sigma_rule, times).gap(horizon) for p in paths])
    frac = np.array([np.mean(gaps > e) for e in eps])
    return np.column_stack([eps, frac])


# ---------------------------------------------------------------------------
# ensembles as trees


def _weights(paths, weights):
    n = paths.shape[0]
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive, one per path")
    return w / w.sum()


def information_ids(paths):
    """Node label of every path at every grid index (equal labels = equal histories)."""
    paths = np.asarray(paths, dtype=float)
    n, m = paths.shape
    ids = np.zeros((n, m), dtype=np.int64)
    _, ids[:, 0] = np.unique(paths[:, 0], return_inverse=True)
    for k in range(1, m):
        bits = np.ascontiguousarray(paths[:, k]).view(np.int64)
        pair = np.column_stack([ids[:, k - 1], bits])
        _, inv = np.unique(pair, axis=0, return_inverse=True)
        ids[:, k] = inv.ravel()
    return ids


def ensemble_from_tree(tree):
    """Leaf paths of a scenario tree and their probabilities."""
    rows = [tree.price[tree.ancestors(leaf)] for leaf in tree.leaves]
    return np.array(rows), tree.abs_prob[tree.leaves].copy()


# ---------------------------------------------------------------------------
# obvious arbitrage


@dataclass
class ArbitrageRecord:
    found: bool
    kind: str = None
    immediate: bool = False
    witness: dict = field(default_factory=dict)

    def to_dict(self):
        return {"found": self.found, "kind": self.kind, "immediate": self.immediate, "witness": self.witness}


def _first_hits(paths, start, level, up):
    """First index ``>= start`` where the path reaches ``level`` (per path, -1 if never)."""
    n, m = paths.shape
    cols = np.arange(m)[None, :]
    ok = (paths >= level) if up else (paths <= level)
    ok &= cols >= start[:, None]
    first = np.where(ok.any(axis=1), ok.argmax(axis=1), -1)
    return first


def detect_obvious_arbitrage(paths, alpha, levels=None, weights=None, min_support=0.01, times=None):
    """Search first-hitting stopping times for an obvious arbitrage.

    ``sigma`` ranges over first hits of ``c S_0`` (from either side, ``c = 1``
    giving ``sigma = 0``). Given ``sigma``, ``tau`` is the first later time the
    price reaches ``(1 + alpha) S_sigma`` (kind a) or ``S_sigma / (1 + alpha)``
    (kind b); an opportunity needs ``tau`` to occur on every path where
    ``sigma`` does. It is immediate when the price does not cross back over
    ``S_sigma`` in between.

    Parameters
    ----------
    paths : array_like, shape (n_paths, n_points)
        Strictly positive prices.
    alpha : float
    levels : array_like, optional
        The ``c`` values; defaults to 41 geometric levels over the range of
        ``S / S_0`` plus 1.
    weights : array_like, optional
        Path probabilities; uniform by default.
    min_support : float
        Smallest probability of ``{sigma < T}`` that counts. Rare hitting
        events of a sampled ensemble carry no information about the law.
    times : array_like, optional
        Grid times reported in the witness.

    Returns
    -------
    ArbitrageRecord
        The witness holds ``sigma_level``, ``sigma_side``, ``support`` and
        per-path ``sigma``/``tau`` times (None where ``sigma`` never occurs).
    """
    check_positive(alpha, "alpha")
    paths = check_paths(paths)
    if np.any(paths <= 0):
        raise ValueError("prices must be strictly positive")
    w = _weights(paths, weights)
    times = _times(paths.shape[1], times)
    s0 = paths[:, 0]
    rel = paths / s0[:, None]
    if levels is None:
        levels = np.geomspace(rel.min(), rel.max(), 41) if rel.max() > rel.min() else np.array([])
    levels = np.unique(np.append(np.asarray(levels, dtype=float), 1.0))
    zero = np.zeros(paths.shape[0], dtype=np.int64)
    best = None
    for c in levels:
        side = "none" if c == 1.0 else ("up" if c > 1.0 else "down")
        sig = zero.copy() if c == 1.0 else _first_hits(rel, zero, c, up=c > 1.0)
        on = sig >= 0
        support = float(w[on].sum())
        if not on.any() or support < min_support:
            continue
        s_sig = paths[on, sig[on]]
        for kind in ("a", "b"):
            target = s_sig * (1 + alpha) if kind == "a" else s_sig / (1 + alpha)
            sub = paths[on]
            cols = np.arange(paths.shape[1])[None, :]
            hit = (sub >= target[:, None]) if kind == "a" else (sub <= target[:, None])
            hit &= cols >= sig[on][:, None]
            tau = np.where(hit.any(axis=1), hit.argmax(axis=1), -1)
            if np.any(tau < 0):
                continue
            between = (cols >= sig[on][:, None]) & (cols <= tau[:, None])
            if kind == "a":
                dip = np.any(between & (sub < s_sig[:, None]))
            else:
                dip = np.any(between & (sub > s_sig[:, None]))
            immediate = not dip
            if best is not None and (best.immediate or not immediate):
                continue
            sig_t = [None] * paths.shape[0]
            tau_t = [None] * paths.shape[0]
            for j, i in enumerate(np.flatnonzero(on)):
                sig_t[i] = float(times[sig[i]])
                tau_t[i] = float(times[tau[j]])
            best = ArbitrageRecord(
                True,
                kind,
                immediate,
                {"sigma_level": float(c), "sigma_side": side, "support": support, "sigma": sig_t, "tau": tau_t},
            )
            if immediate:
                return best
    return best if best is not None else ArbitrageRecord(False)


# ---------------------------------------------------------------------------
# consistent price systems


class CpsConstructionError(RuntimeError):
    """Raised when the ensemble does not allow the next step of the construction.

    ``gamma_events`` lists the barrier moves made before the failure.
    """

    def __init__(self, message, gamma_events=()):
        super().__init__(message)
        self.gamma_events = list(gamma_events)


@dataclass
class CpsResult:
    """A consistent price system built on a finite path ensemble.

    Attributes
    ----------
    mu_prime : float
        Consistency level: ``S_tilde / S`` should lie in ``[1/(1+mu'), 1+mu']``.
    band : float
        Exit band ``mu`` with ``(1 + mu)**2 = 1 + mu'``.
    stopping_times : list of list of int
        Grid indices ``rho_0 = 0 < rho_1 < ...`` per path, ending at the last index.
    density : ndarray
        ``dQ/dP`` per path; positive with P-mean 1.
    q : ndarray
        Q probability per path.
    s_tilde : ndarray
        ``E_Q[S_rho_next | F_t]`` at every grid point.
    residuals : list of dict
        One row per information cell and step: step, index, s, q_mean, residual.
    gamma_events : list of dict
        Cells where the one-sided branch moved the opposite barrier.
    """

    mu_prime: float
    band: float
    stopping_times: list
    density: np.ndarray
    q: np.ndarray
    s_tilde: np.ndarray
    residuals: list
    gamma_events: list

    @property
    def max_residual(self):
        return max((r["residual"] for r in self.residuals), default=0.0)

    def containment_at_stops(self, paths):
        """Largest violation of the spread at the stopping times (zero when exact)."""
        paths = np.asarray(paths, dtype=float)
        worst = 0.0
        k = 1.0 + self.mu_prime
        for i, stops in enumerate(self.stopping_times):
            s = paths[i, stops]
            st = self.s_tilde[i, stops]
            worst = max(worst, float(np.max(np.maximum(s / k - st, st - k * s))))
        return max(worst, 0.0)

    def spread_excess(self, paths):
        """Largest relative excursion of ``S_tilde / S`` outside the level at any grid point."""
        ratio = self.s_tilde / np.asarray(paths, dtype=float)
        k = 1.0 + self.mu_prime
        return float(max(np.max(ratio / k), np.max(1.0 / (k * ratio))) - 1.0)

    def to_dict(self):
        return {
            "mu_prime": self.mu_prime,
            "band": self.band,
            "stopping_times": self.stopping_times,
            "density": self.density.tolist(),
            "q": self.q.tolist(),
            "s_tilde": self.s_tilde.tolist(),
            "residuals": self.residuals,
            "gamma_events": self.gamma_events,
        }


def _exits(paths, rows, start, s, lo, hi):
    """First index after ``start`` leaving ``(lo s, hi s)`` (last index if none)."""
    sub = paths[rows]
    m = paths.shape[1]
    cols = np.arange(m)[None, :]
    out = ((sub >= hi * s) | (sub <= lo * s)) & (cols > start)
    return np.where(out.any(axis=1), out.argmax(axis=1), m - 1)


def _running_extreme(paths, rows, start, stop, low):
    sub = paths[rows]
    cols = np.arange(paths.shape[1])[None, :]
    mask = (cols >= start) & (cols <= stop[:, None])
    if low:
        return np.where(mask, sub, np.inf).min(axis=1)
    return np.where(mask, sub, -np.inf).max(axis=1)


def _gamma_barrier(paths, rows, start, s, step, p_abs, up_side, band):
    """Move the barrier opposite to a one-sided exit, as close to the extreme as the grid allows."""
    hi, lo = 1.0 + band, 1.0 / (1.0 + band)
    stop = _exits(paths, rows, start, s, lo, hi)
    ext = _running_extreme(paths, rows, start, stop, low=up_side) / s
    beta = ext.min() if up_side else ext.max()
    if (up_side and beta >= 1.0) or (not up_side and beta <= 1.0):
        raise CpsConstructionError(
            f"step {step}: obvious immediate arbitrage in the cell at index {start}; no gamma in (beta, 1)"
        )
    vals = np.unique(ext)
    if up_side:
        nxt = vals[vals > beta]
        nxt = min(nxt[0], 1.0) if nxt.size else 1.0
        gamma = 0.5 * (beta + nxt)
        hit = ext <= gamma
    else:
        nxt = vals[vals < beta]
        nxt = max(nxt[-1], 1.0) if nxt.size else 1.0
        gamma = 0.5 * (beta + nxt)
        hit = ext >= gamma
    mass = float(p_abs[rows][hit].sum())
    if mass >= 2.0 ** (-step):
        raise CpsConstructionError(
            f"step {step}: ensemble too small for the gamma split at index {start} "
            f"(P[A-] = {mass:.3g} >= 2^-{step})"
        )
    new_lo, new_hi = (gamma, hi) if up_side else (lo, gamma)
    return gamma, mass, new_lo, new_hi


def build_cps(paths, mu_prime, weights=None, gamma_policy="scan"):
    """Consistent price system on a finite ensemble by successive exits from a price band.

    From each stopping time ``rho_n`` with price ``s`` the next one is the
    first exit of ``S`` from ``(s/(1+mu), (1+mu) s)``, or the last index.
    Within an information cell ``Q`` is tilted by one constant on the paths
    ending above ``s`` and another on those ending below, so that
    ``E_Q[S_rho_{n+1} | cell] = s``; for a two-point exit this is
    ``Q[up] = (1 - gamma) / (1 + mu - gamma)``. When no path in a cell
    ends on one side, the opposite barrier moves inside the band to the
    smallest grid-separable level that some path reaches before its exit,
    provided those paths carry probability below ``2**-n``.

    Parameters
    ----------
    paths : array_like, shape (n_paths, n_points)
        Strictly positive prices.
    mu_prime : float in (0, 1)
    weights : array_like, optional
        Path probabilities; uniform by default.
    gamma_policy : {"scan", "none"}
        "none" raises instead of moving a barrier.

    Returns
    -------
    CpsResult

    Raises
    ------
    CpsConstructionError
        A cell is one-sided with no admissible barrier, or the policy is "none".
    """
    paths = check_paths(paths)
    if np.any(paths <= 0):
        raise ValueError("prices must be strictly positive")
    if not 0.0 < mu_prime < 1.0:
        raise ValueError(f"mu_prime must lie in (0, 1), got {mu_prime}")
    if gamma_policy not in ("scan", "none"):
        raise ValueError("gamma_policy must be 'scan' or 'none'")
    p = _weights(paths, weights)
    n, m = paths.shape
    band = float(np.sqrt(1.0 + mu_prime) - 1.0)
    ids = information_ids(paths)
    q = p.copy()
    rho = np.zeros(n, dtype=np.int64)
    stops = [[0] for _ in range(n)]
    # target[i, k] = S at the first stopping time after k (the one in force at k)
    target = np.empty((n, m))
    residuals, gamma_events = [], []
    step = 0
    while np.any(rho < m - 1):
        step += 1
        active = np.flatnonzero(rho < m - 1)
        keys = np.column_stack([rho[active], ids[active, rho[active]]])
        _, cell = np.unique(keys, axis=0, return_inverse=True)
        cell = cell.ravel()
        new_rho = rho.copy()
        for c in range(cell.max() + 1):
            rows = active[cell == c]
            start = int(rho[rows[0]])
            s = float(paths[rows[0], start])
            lo, hi = 1.0 / (1.0 + band), 1.0 + band
            ex = _exits(paths, rows, start, s, lo, hi)
            v = paths[rows, ex]
            above, below = v > s, v < s
            if above.any() != below.any():
                if gamma_policy == "none":
                    raise CpsConstructionError(f"step {step}: one-sided exit at index {start}")
                try:
                    gamma, mass, lo, hi = _gamma_barrier(paths, rows, start, s, step, p, above.any(), band)
                except CpsConstructionError as err:
                    raise CpsConstructionError(str(err), gamma_events) from None
                ex = _exits(paths, rows, start, s, lo, hi)
                v = paths[rows, ex]
                above, below = v > s, v < s
                gamma_events.append({"step": step, "index": start, "s": s, "gamma": float(gamma), "p_minus": float(mass)})
            wq = q[rows]
            tot = wq.sum()
            if above.any():
                wu, wd = wq[above].sum(), wq[below].sum()
                mu_up = fsum(wq[above] * v[above]) / wu
                mu_dn = fsum(wq[below] * v[below]) / wd
                mass = (tot - wq[~above & ~below].sum()) / tot
                a = mass * (s - mu_dn) / (mu_up - mu_dn)
                b = mass - a
                wq = wq.copy()
                wq[above] *= a * tot / wu
                wq[below] *= b * tot / wd
                q[rows] = wq
            mean = fsum(wq * v) / fsum(wq)
            residuals.append(
                {"step": step, "index": start, "s": s, "q_mean": mean, "residual": abs(mean - s) / s}
            )
            for i, k, val in zip(rows, ex, v):
                target[i, start:k] = val
                stops[i].append(int(k))
            new_rho[rows] = ex
        rho = new_rho
    target[:, m - 1] = paths[:, m - 1]
    q = q / q.sum()
    s_tilde = np.empty((n, m))
    for k in range(m):
        lab = ids[:, k]
        num = np.bincount(lab, weights=q * target[:, k])
        den = np.bincount(lab, weights=q)
        s_tilde[:, k] = num[lab] / den[lab]
    return CpsResult(float(mu_prime), band, stops, q / p, q, s_tilde, residuals, gamma_events)


class ConsistentPriceSystem(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`build_cps`.

    ``fit`` builds the price system on an ensemble, ``transform`` returns the
    consistent price process ``S_tilde`` for that ensemble.
    """

    def __init__(self, mu_prime=0.1, gamma_policy="scan"):
        self.mu_prime = mu_prime
        self.gamma_policy = gamma_policy

    def fit(self, X, y=None, sample_weight=None):
        self.result_ = build_cps(X, self.mu_prime, sample_weight, self.gamma_policy)
        self.n_features_in_ = np.asarray(X).shape[1]
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape != self.result_.s_tilde.shape:
            raise ValueError("transform expects the ensemble the system was built on")
        return self.result_.s_tilde.copy()
