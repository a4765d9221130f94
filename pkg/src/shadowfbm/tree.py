"""Finite non-recombining scenario trees and the fractional Black-Scholes tree."""

import json
from dataclasses import dataclass, field

import numpy as np

from .fbm import ModelSpec, covariance_matrix
from .io import dumps

MAX_FBS_DEPTH = 14


@dataclass
class ScenarioTree:
    """Event tree stored as flat node arrays in breadth-first order.

    Attributes
    ----------
    parent : ndarray of int
        Parent index, ``-1`` for the root.
    time_index : ndarray of int
        Depth of each node; the root has depth 0.
    price : ndarray
        Stock price (ask) at each node.
    prob : ndarray
        Conditional probability of reaching the node from its parent.
    """

    parent: np.ndarray
    time_index: np.ndarray
    price: np.ndarray
    prob: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.parent = np.asarray(self.parent, dtype=np.int64)
        self.time_index = np.asarray(self.time_index, dtype=np.int64)
        self.price = np.asarray(self.price, dtype=float)
        self.prob = np.asarray(self.prob, dtype=float)
        n = self.parent.size
        if not (self.time_index.size == self.price.size == self.prob.size == n):
            raise ValueError("node arrays differ in length")
        self._validate()
        self._index()

    def _validate(self):
        roots = np.flatnonzero(self.parent < 0)
        if roots.size != 1 or roots[0] != 0 or self.time_index[0] != 0:
            raise ValueError("a tree needs exactly one root, stored first, at time 0")
        if np.any(self.parent[1:] >= np.arange(1, self.parent.size)):
            raise ValueError("nodes must be stored after their parent")
        if np.any(self.time_index[1:] != self.time_index[self.parent[1:]] + 1):
            raise ValueError("children must sit one time step after their parent")
        if np.any(~np.isfinite(self.price)) or np.any(self.price <= 0):
            raise ValueError("prices must be strictly positive")
        if np.any(self.prob[1:] <= 0):
            raise ValueError("branch probabilities must be positive")
        sums = np.zeros(self.parent.size)
        np.add.at(sums, self.parent[1:], self.prob[1:])
        has_kids = np.zeros(self.parent.size, dtype=bool)
        has_kids[self.parent[1:]] = True
        if np.any(np.abs(sums[has_kids] - 1.0) > 1e-12):
            raise ValueError("branch probabilities must sum to one at every node")
        depth = self.time_index.max()
        if depth < 1:
            raise ValueError("tree depth must be at least 1")
        if np.any(self.time_index[~has_kids] != depth):
            raise ValueError("all leaves must sit at the final time")

    def _index(self):
        n = self.parent.size
        self.n_nodes = n
        self.depth = int(self.time_index.max())
        kids = [[] for _ in range(n)]
        for i in range(1, n):
            kids[self.parent[i]].append(i)
        self.children = [np.array(k, dtype=np.int64) for k in kids]
        self.is_leaf = np.array([k.size == 0 for k in self.children])
        self.leaves = np.flatnonzero(self.is_leaf)
        self.interior = np.flatnonzero(~self.is_leaf)
        p = np.ones(n)
        for i in range(1, n):
            p[i] = p[self.parent[i]] * self.prob[i]
        self.abs_prob = p

    def ancestors(self, node, include_self=True):
        out = [node] if include_self else []
        node = self.parent[node]
        while node >= 0:
            out.append(node)
            node = self.parent[node]
        return out[::-1]

    def cond_expectation(self, leaf_or_node_values):
        """Backward conditional expectation of node values given at the leaves.

        Interior entries of the input are ignored and overwritten.
        """
        out = np.array(leaf_or_node_values, dtype=float, copy=True)
        for n in self.interior[::-1]:
            kids = self.children[n]
            out[n] = np.dot(self.prob[kids], out[kids])
        return out

    # --- serialisation -------------------------------------------------
    def to_dict(self):
        return {
            "nodes": [
                {
                    "id": int(i),
                    "parent": int(self.parent[i]) if self.parent[i] >= 0 else None,
                    "time_index": int(self.time_index[i]),
                    "price": float(self.price[i]),
                    "prob": float(self.prob[i]),
                }
                for i in range(self.n_nodes)
            ],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data):
        nodes = sorted(data["nodes"], key=lambda d: (d["time_index"], d["id"]))
        pos = {d["id"]: k for k, d in enumerate(nodes)}
        parent = [-1 if d.get("parent") is None else pos[d["parent"]] for d in nodes]
        prob = [1.0 if d.get("parent") is None else d["prob"] for d in nodes]
        return cls(
            parent=parent,
            time_index=[d["time_index"] for d in nodes],
            price=[d["price"] for d in nodes],
            prob=prob,
            meta=dict(data.get("meta", {})),
        )

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def one_period_tree(s0, prices, probs):
    """Root at ``s0`` with one leaf per entry of ``prices``."""
    k = len(prices)
    return ScenarioTree(
        parent=[-1] + [0] * k,
        time_index=[0] + [1] * k,
        price=[s0, *prices],
        prob=[1.0, *probs],
    )


def _conditioning_weights(points, hurst):
    """Regression weights and residual variance of ``B_{t_{k+1}}`` on ``B_{t_1..t_k}``."""
    cov = covariance_matrix(points[1:], hurst)
    weights, variances = [], []
    for k in range(cov.shape[0]):
        if k == 0:
            weights.append(np.zeros(0))
            variances.append(cov[0, 0])
            continue
        w = np.linalg.lstsq(cov[:k, :k], cov[:k, k], rcond=1e-13)[0]
        weights.append(w)
        variances.append(max(cov[k, k] - cov[:k, k] @ w, 0.0))
    return weights, np.array(variances)


def build_fbs_tree(model, depth, branching=2, seed=0):
    """Binary tree matching the conditional mean and variance of fBm log-prices.

    Each node branches into ``m +- sqrt(v)`` where ``m`` and ``v`` are the
    conditional mean and variance of the next log-price given the node's
    history on the grid ``t_k = k T / depth``. Branch probabilities are 1/2.
    ``seed`` is recorded only; the construction is deterministic.
    """
    if branching != 2:
        raise ValueError("only binary moment-matching trees are supported")
    depth = int(depth)
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if depth > MAX_FBS_DEPTH:
        raise ValueError(
            f"depth {depth} exceeds {MAX_FBS_DEPTH}: the tree would hold "
            f"{2 ** (depth + 1) - 1} nodes"
        )
    if not isinstance(model, ModelSpec):
        raise TypeError("model must be a ModelSpec")
    points = np.linspace(0.0, model.horizon, depth + 1)
    weights, variances = _conditioning_weights(points, model.hurst)
    n_nodes = 2 ** (depth + 1) - 1
    parent = np.full(n_nodes, -1, dtype=np.int64)
    tidx = np.zeros(n_nodes, dtype=np.int64)
    bvals = np.zeros(n_nodes)
    history = [np.zeros(0)]
    for i in range(1, n_nodes):
        p = (i - 1) // 2
        k = tidx[p]
        hist = history[p]
        mean = hist @ weights[k] if k else 0.0
        sign = 1.0 if i % 2 == 1 else -1.0
        b = mean + sign * np.sqrt(variances[k])
        parent[i] = p
        tidx[i] = k + 1
        bvals[i] = b
        history.append(np.append(hist, b))
    logp = model.mu * points[tidx] + model.sigma * bvals
    prob = np.full(n_nodes, 0.5)
    prob[0] = 1.0
    meta = {
        "mu": model.mu,
        "sigma": model.sigma,
        "hurst": model.hurst,
        "horizon": model.horizon,
        "depth": depth,
        "seed": int(seed),
    }
    return ScenarioTree(parent, tidx, np.exp(logp), prob, meta=meta)
