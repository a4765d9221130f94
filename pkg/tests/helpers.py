"""Random test inputs."""

import numpy as np

from shadowfbm.tree import ScenarioTree


def random_tree(rng, depth, max_children=3, vol=0.15):
    """Arbitrage-free random tree: every node has an up and a down child."""
    parent, tidx, price, prob = [-1], [0], [1.0], [1.0]
    frontier = [0]
    for k in range(depth):
        nxt = []
        for n in frontier:
            m = int(rng.integers(2, max_children + 1))
            r = vol * rng.uniform(0.1, 1.0, m)
            r[0], r[1] = abs(r[0]), -abs(r[1])
            r[2:] *= rng.choice([-1.0, 1.0], m - 2)
            p = rng.dirichlet(np.full(m, 2.0))
            p = p / p.sum()
            p[-1] = 1.0 - p[:-1].sum()
            for j in range(m):
                parent.append(n)
                tidx.append(k + 1)
                price.append(price[n] * np.exp(r[j]))
                prob.append(p[j])
                nxt.append(len(parent) - 1)
        frontier = nxt
    return ScenarioTree(parent, tidx, price, prob)
