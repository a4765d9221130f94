"""Log-barrier interior point method and active-set polish for smooth convex programs.

Problems have the form ``min f(v)`` subject to ``G v + h >= 0`` and optional
``A v = b``. ``f`` is supplied as a callable returning ``(value, grad, hess)``
with ``value = inf`` outside its domain.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse
from scipy.optimize import nnls
from scipy.sparse.linalg import splu

class SolverError(RuntimeError):
    """Raised when an optimisation does not reach its tolerance."""


@dataclass
class BarrierResult:
    v: np.ndarray
    t: float
    multipliers: np.ndarray
    newton_steps: int
    outer_steps: int
    gap: float


def _dense(m):
    return m.toarray() if sparse.issparse(m) else np.asarray(m)


def _solve_spd(H, g):
    if sparse.issparse(H):
        try:
            return splu(H.tocsc(), permc_spec="MMD_AT_PLUS_A").solve(g)
        except RuntimeError:
            H = H.toarray()
    try:
        return linalg.cho_solve(linalg.cho_factor(H, check_finite=False), g, check_finite=False)
    except linalg.LinAlgError:
        return linalg.lstsq(H, g, check_finite=False)[0]


def _solve_eq(H, A, g, r):
    """Solve ``[[H, A^T], [A, 0]] [d; w] = [g; r]``."""
    n = H.shape[0]
    K = sparse.bmat([[sparse.csr_matrix(H), sparse.csr_matrix(A).T], [sparse.csr_matrix(A), None]])
    K = sparse.csc_matrix(K)
    rhs = np.concatenate([g, r])
    try:
        sol = splu(K, permc_spec="MMD_AT_PLUS_A").solve(rhs)
        if not np.all(np.isfinite(sol)) or np.max(np.abs(K @ sol - rhs)) > 1e-8 * max(1.0, np.max(np.abs(rhs))):
            raise RuntimeError
    except RuntimeError:
        sol = linalg.lstsq(K.toarray(), rhs, check_finite=False)[0]
    return sol[:n], sol[n:]


def _solve_reduced(H, Z, Apinv, g, r):
    """Newton step ``d`` with ``A d = r`` minimising ``d'Hd/2 - g'd``, on the null space of ``A``.

    Barrier Hessians near the boundary have diagonals spanning dozens of
    orders of magnitude; Jacobi scaling before the Cholesky factorisation
    removes most of that.
    """
    d0 = Apinv @ r
    Hd = _dense(H)
    M = Z.T @ Hd @ Z
    rhs = Z.T @ (g - Hd @ d0)
    s = 1.0 / np.sqrt(np.maximum(np.abs(np.diag(M)), np.finfo(float).tiny))
    Ms = M * s[:, None] * s[None, :]
    try:
        u = s * linalg.cho_solve(linalg.cho_factor(Ms, check_finite=False), s * rhs, check_finite=False)
    except linalg.LinAlgError:
        u = s * linalg.lstsq(Ms, s * rhs, check_finite=False)[0]
    return d0 + Z @ u


def _step_to_boundary(r, dr):
    neg = dr < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, 0.99 * float(np.min(-r[neg] / dr[neg])))


def barrier_solve(
    fun,
    G,
    h,
    v0,
    A=None,
    b=None,
    t0=1.0,
    growth=10.0,
    gap_tol=1e-9,
    newton_tol=1e-10,
    max_newton=5000,
):
    """Minimise ``f`` over ``{G v + h >= 0, A v = b}`` from a strictly feasible ``v0``."""
    G = sparse.csr_matrix(G)
    h = np.asarray(h, dtype=float)
    v = np.array(v0, dtype=float)
    Ad = None if A is None else _dense(A)
    if Ad is not None:
        Z = linalg.null_space(Ad)
        Apinv = linalg.pinv(Ad)
    m = G.shape[0]
    r = G @ v + h
    if np.any(r <= 0):
        raise SolverError("barrier start is not strictly feasible")
    t = t0
    steps = outer = 0
    inner_cap = 100

    def phi(vv, tt):
        rr = G @ vv + h
        if np.any(rr <= 0):
            return np.inf
        val = fun(vv)[0]
        return tt * val - np.sum(np.log(rr)) if np.isfinite(val) else np.inf

    while True:
        outer += 1
        inner = 0
        while True:
            val, grad, hess = fun(v)
            r = G @ v + h
            inv = 1.0 / r
            g = t * grad - G.T @ inv
            H = G.T @ sparse.diags(inv**2) @ G
            H = (t * hess + H) if not sparse.issparse(hess) else (t * hess + H)
            if Ad is None:
                dv = -_solve_spd(H, g)
            else:
                # solving for b - A v rather than 0 pulls rounding drift back
                dv = _solve_reduced(H, Z, Apinv, -g, b - Ad @ v)
            dec = float(-g @ dv)
            # the barrier function is only known to ~eps * t |f|
            floor = max(newton_tol, 1e-15 * t * max(1.0, abs(val)))
            if dec / 2.0 <= floor or steps >= max_newton or inner >= inner_cap:
                break
            inner += 1
            alpha = _step_to_boundary(r, G @ dv)
            if dec > 0.0625:
                f0 = phi(v, t)
                slope = -dec
                while alpha > 1e-20:
                    if phi(v + alpha * dv, t) <= f0 + 0.25 * alpha * slope:
                        break
                    alpha *= 0.5
            else:
                while alpha > 1e-20 and not np.isfinite(fun(v + alpha * dv)[0]):
                    alpha *= 0.5
            v = v + alpha * dv
            steps += 1
            if alpha <= 1e-20:
                break
        if steps >= max_newton:
            raise SolverError(f"barrier method hit the Newton step cap ({max_newton})")
        if m / t <= gap_tol * max(1.0, abs(val)):
            break
        t *= growth
    r = G @ v + h
    if Ad is not None:
        eq = float(np.max(np.abs(Ad @ v - b)))
        if eq > 1e-9 * max(1.0, float(np.max(np.abs(b)))):
            raise SolverError(f"barrier method lost the equality constraints (residual {eq:.3e})")
    return BarrierResult(v, t, 1.0 / (t * r), steps, outer, m / t)


def _independent_rows(M, rows):
    """Subset of ``rows`` of ``M`` that is linearly independent (pivoted QR)."""
    if rows.size == 0:
        return rows
    _, R, piv = linalg.qr(M[rows].T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > 1e-10 * max(diag.max(initial=0.0), 1.0)))
    return rows[np.sort(piv[:rank])]


def active_set_polish(fun, G, h, v, mult, A=None, b=None, max_iter=5000, reg=1e-12):
    """Primal active-set Newton method started from a barrier solution.

    The working set starts from the rows whose barrier multiplier exceeds
    their slack. Each iteration takes a Newton step for ``f`` restricted to
    the working set, shortened by a ratio test against the other rows; a
    blocking row joins the working set and a row with a negative multiplier
    leaves it once the step vanishes. A small proximal term keeps the step
    defined when ``f`` is flat along the working set. Degenerate vertices
    are settled by non-negative least squares on all active rows.

    Returns ``(v, multipliers, stationarity residual)``, or None if the
    iteration cap is hit or the end point is infeasible beyond rounding.
    """
    G = sparse.csr_matrix(G)
    h = np.asarray(h, dtype=float)
    Ad = None if A is None else sparse.csr_matrix(A)
    w = np.array(v, dtype=float)
    r = G @ w + h
    guess = np.flatnonzero(mult > r)
    work = set(_independent_rows(G[guess].toarray(), np.arange(guess.size)).tolist())
    work = {int(guess[k]) for k in work}
    eye = sparse.identity(w.size, format="csr")
    Gabs = abs(G)

    def row_scale(ww):
        # rounding level of each row residual
        return np.maximum(Gabs @ np.abs(ww) + np.abs(h), 1.0)

    for _ in range(max_iter):
        val, grad, hess = fun(w)
        rows = np.array(sorted(work), dtype=np.int64)
        GW = G[rows]
        cons = GW if Ad is None else sparse.vstack([GW, Ad])
        resid_eq = -(GW @ w + h[rows])
        if Ad is not None:
            resid_eq = np.concatenate([resid_eq, b - Ad @ w])
        H = sparse.csr_matrix(hess) + reg * max(1.0, abs(val)) * eye
        d, lam = _solve_eq(H, cons, -grad, resid_eq)
        scale = max(1.0, float(np.max(np.abs(grad))))
        small = float(np.max(np.abs(d), initial=0.0)) <= 1e-13 * max(1.0, float(np.max(np.abs(w))))
        # once the predicted decrease is at rounding level further steps are noise
        flat = -float(grad @ d) <= 1e-15 * max(1.0, abs(val))
        if small or flat:
            mu = np.zeros(G.shape[0])
            mu[rows] = -lam[: rows.size]
            if mu.min(initial=0.0) >= -1e-10 * scale:
                break
            r = G @ w + h
            tight = np.flatnonzero(r <= 1e-13 * row_scale(w))
            if Ad is None and tight.size > rows.size:
                m_all, res = nnls(G[tight].T.toarray(), grad, maxiter=50 * tight.size)
            else:
                res = np.inf
            if res <= 1e-12 * scale:
                mu = np.zeros(G.shape[0])
                mu[tight] = m_all
                break
            work.discard(int(rows[int(np.argmin(mu[rows]))]))
            continue
        r = np.maximum(G @ w + h, 0.0)
        gd = G @ d
        alpha, block = 1.0, -1
        others = np.ones(G.shape[0], dtype=bool)
        others[rows] = False
        cand = np.flatnonzero(others & (gd < 0))
        if cand.size:
            ratios = -r[cand] / gd[cand]
            k = int(np.argmin(ratios))
            if ratios[k] < 1.0:
                alpha, block = float(ratios[k]), int(cand[k])
        slope = float(grad @ d)
        while alpha > 0:
            f1 = fun(w + alpha * d)[0]
            if np.isfinite(f1) and (f1 <= val + 1e-4 * alpha * min(slope, 0.0) or alpha * np.max(np.abs(d)) < 1e-9):
                break
            alpha *= 0.5
            block = -1
        w = w + alpha * d
        if block >= 0:
            work.add(block)
    else:
        return None
    grad = fun(w)[1]
    stat = grad - G.T @ mu
    if Ad is not None:
        stat = stat + Ad.T @ lam[len(work):]
    r = G @ w + h
    if np.any(r < -1e-12 * row_scale(w)):
        return None
    return w, mu, float(np.max(np.abs(stat), initial=0.0))
