"""
Dual problem on scenario trees.

A consistent price system is a pair ``(Z0, Z1)`` of positive martingales with
``Z0_T`` a density and ``Z1 / Z0`` inside the bid-ask spread. The dual value
is ``v(y) = min E[V(y Z0_T)]`` over them. On a tree both martingales are
parameterised by their leaf values ``z, w``, and the spread condition becomes
two linear inequalities per node. Without costs ``Z1 = S Z0`` and the
conditions are linear equalities.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog, minimize_scalar

from ._barrier import SolverError, barrier_solve
from .ledger import CostSpec
from .tree_optimizer import maximize_utility


def _lam(cost):
    return cost.lam if isinstance(cost, CostSpec) else float(cost)


def _leaf_sets(tree):
    """For each node the leaf columns below it, and for each interior node the child towards each leaf."""
    col = {leaf: j for j, leaf in enumerate(tree.leaves)}
    below = [[] for _ in range(tree.n_nodes)]
    step = [dict() for _ in range(tree.n_nodes)]
    for leaf in tree.leaves:
        path = tree.ancestors(leaf)
        for a, nxt in zip(path, path[1:] + [None]):
            below[a].append(col[leaf])
            if nxt is not None:
                step[a][col[leaf]] = nxt
    return below, step


@dataclass
class DualProgram:
    """Linear description of the consistent price systems of a tree."""

    G: sparse.csr_matrix
    h: np.ndarray
    A: np.ndarray
    b: np.ndarray
    n_leaves: int
    frictionless: bool


def dual_program(tree, cost):
    lam = _lam(cost)
    nl = tree.leaves.size
    P = tree.abs_prob
    pl = P[tree.leaves]
    below, step = _leaf_sets(tree)
    S = tree.price
    if lam == 0.0:
        G = sparse.identity(nl, format="csr")
        h = np.zeros(nl)
        rows = [pl.copy()]
        for n in tree.interior:
            r = np.zeros(nl)
            for j in below[n]:
                r[j] = pl[j] / P[n] * (S[n] - S[step[n][j]])
            rows.append(r)
        A = np.array(rows)
        b = np.zeros(len(rows))
        b[0] = 1.0
        return DualProgram(G, h, A, b, nl, True)
    rows, cols, vals = [], [], []
    r = 0
    for j in range(nl):
        rows.append(r)
        cols.append(j)
        vals.append(1.0)
        r += 1
    for n in range(tree.n_nodes):
        for j in below[n]:
            q = pl[j] / P[n]
            # S Z0 - Z1 >= 0
            rows += [r, r]
            cols += [j, nl + j]
            vals += [q * S[n], -q]
            # Z1 - (1 - lam) S Z0 >= 0
            rows += [r + 1, r + 1]
            cols += [j, nl + j]
            vals += [-q * (1 - lam) * S[n], q]
        r += 2
    G = sparse.csr_matrix((vals, (rows, cols)), shape=(r, 2 * nl))
    A = np.concatenate([pl, np.zeros(nl)])[None, :]
    return DualProgram(G, np.zeros(r), A, np.array([1.0]), nl, False)


def strictly_feasible_point(prog):
    """Maximise the smallest slack by linear programming; raises if it is not positive."""
    G = prog.G.toarray()
    n = G.shape[1]
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-G, np.ones((G.shape[0], 1))])
    A_eq = np.hstack([prog.A, np.zeros((prog.A.shape[0], 1))])
    bounds = [(None, None)] * n + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=prog.h, A_eq=A_eq, b_eq=prog.b, bounds=bounds, method="highs")
    if res.status != 0 or res.x[-1] <= 1e-12:
        raise SolverError("the tree admits no strictly consistent price system")
    return res.x[:n]


def _dual_objective(utility, pl, y, n_leaves):
    def fun(v):
        z = v[:n_leaves]
        if np.any(z <= 0):
            return np.inf, None, None
        val = float(np.dot(pl, utility.v_conjugate(y * z)))
        grad = np.zeros(v.size)
        grad[:n_leaves] = pl * y * utility.conjugate_prime(y * z)
        d = np.zeros(v.size)
        d[:n_leaves] = pl * y**2 * utility.conjugate_second(y * z)
        return val, grad, sparse.diags(d)

    return fun


@dataclass
class DualSolution:
    value: float
    z: np.ndarray
    w: np.ndarray
    gap: float


def dual_value(tree, cost, utility, y, prog=None, start=None):
    """``v(y)`` and the minimising consistent price system (leaf values)."""
    if not y > 0:
        raise ValueError("y must be positive")
    prog = dual_program(tree, cost) if prog is None else prog
    start = strictly_feasible_point(prog) if start is None else start
    pl = tree.abs_prob[tree.leaves]
    fun = _dual_objective(utility, pl, float(y), prog.n_leaves)
    if prog.frictionless and np.linalg.matrix_rank(prog.A) == prog.n_leaves:
        v = start
        gap = 0.0
    else:
        res = barrier_solve(fun, prog.G, prog.h, start, A=prog.A, b=prog.b, gap_tol=1e-12)
        v, gap = res.v, res.gap
    z = v[: prog.n_leaves]
    w = tree.price[tree.leaves] * z if prog.frictionless else v[prog.n_leaves:]
    return DualSolution(fun(v)[0], z, w, gap)


@dataclass
class DualityRecord:
    u_of_x: float
    y_grid: np.ndarray
    v_values: np.ndarray
    y_star: float
    min_value: float
    gap: float

    def to_dict(self):
        return {
            "u_of_x": self.u_of_x,
            "y_grid": self.y_grid.tolist(),
            "v_values": self.v_values.tolist(),
            "y_star": self.y_star,
            "min_value": self.min_value,
            "gap": self.gap,
        }


def dual_conjugacy_check(tree, cost, utility, x, y_grid, tol=1e-8):
    """Compare ``u(x)`` with ``min_y v(y) + x y``.

    The minimum is taken over ``y_grid`` and then refined by a bounded scalar
    search between the grid neighbours of the best grid point. ``gap`` is
    ``min_y (v(y) + x y) - u(x)``; weak duality makes it non-negative and
    it vanishes at a shadow price.
    """
    y_grid = np.sort(np.asarray(y_grid, dtype=float))
    if y_grid.size == 0 or np.any(y_grid <= 0):
        raise ValueError("y_grid must hold positive values")
    u = maximize_utility(tree, cost, utility, x, tol).value
    prog = dual_program(tree, cost)
    start = strictly_feasible_point(prog)
    vals = np.array([dual_value(tree, cost, utility, y, prog, start).value for y in y_grid])
    obj = vals + x * y_grid
    k = int(np.argmin(obj))
    y_star, best = float(y_grid[k]), float(obj[k])
    if y_grid.size >= 3:
        lo = y_grid[max(k - 1, 0)]
        hi = y_grid[min(k + 1, y_grid.size - 1)]
        res = minimize_scalar(
            lambda yy: dual_value(tree, cost, utility, yy, prog, start).value + x * yy,
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-10 * hi},
        )
        if res.fun < best:
            y_star, best = float(res.x), float(res.fun)
    return DualityRecord(u, y_grid, vals, y_star, best, best - u)


def random_consistent_price_system(tree, cost, rng, prog=None):
    """A random strictly consistent price system.

    Mixes a random vertex of the consistent-price polytope with a strictly
    interior point. Returns ``(Z0, S_tilde)`` per node.
    """
    prog = dual_program(tree, cost) if prog is None else prog
    centre = strictly_feasible_point(prog)
    n = centre.size
    if prog.frictionless:
        v = centre
    else:
        res = linprog(
            rng.normal(size=n),
            A_ub=-prog.G.toarray(),
            b_ub=prog.h,
            A_eq=prog.A,
            b_eq=prog.b,
            bounds=[(None, None)] * n,
            method="highs",
        )
        a = rng.uniform(0.0, 0.95)
        v = a * res.x + (1 - a) * centre if res.status == 0 else centre
    nl = prog.n_leaves
    z = np.zeros(tree.n_nodes)
    z[tree.leaves] = v[:nl]
    z1 = np.zeros(tree.n_nodes)
    z1[tree.leaves] = tree.price[tree.leaves] * v[:nl] if prog.frictionless else v[nl:]
    z0 = tree.cond_expectation(z)
    z1 = tree.cond_expectation(z1)
    return z0, z1 / z0


def deflator_bound(tree, utility, x, z0, y):
    """``E[V(y Z0_T)] + x y``, an upper bound for the primal value."""
    pl = tree.abs_prob[tree.leaves]
    zt = np.asarray(z0)[tree.leaves]
    return float(np.dot(pl, utility.v_conjugate(y * zt))) + x * y
