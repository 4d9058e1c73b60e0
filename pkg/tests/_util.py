"""Shared builders and oracles for the test suite."""
import itertools

import numpy as np

from fairsample.graph import AttributedGraph


def make_graph(n, edges, s=None, x=None, y=None, d=2, seed=0, zeta=2):
    rng = np.random.default_rng(seed)
    s = np.resize([0, 1], n) if s is None else np.asarray(s)
    x = rng.normal(size=(n, d)) if x is None else np.asarray(x, dtype=float)
    y = np.zeros(n, dtype=int) if y is None else np.asarray(y)
    return AttributedGraph(x, s, y, np.asarray(edges, dtype=int).reshape(-1, 2), zeta=zeta)


def random_graph(n, p, rng, d=3, zeta=2, labels=True):
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    s = rng.permutation(np.resize(np.arange(zeta), n))
    y = rng.integers(0, 2, n) if labels else np.full(n, -1)
    return AttributedGraph(rng.normal(size=(n, d)), s, y,
                           np.stack([iu[keep], ju[keep]], axis=1), zeta=zeta)


def floyd_warshall(g):
    D = np.full((g.n, g.n), np.inf)
    np.fill_diagonal(D, 0)
    for u, v in g.edges:
        D[u, v] = D[v, u] = 1
    for k in range(g.n):
        D = np.minimum(D, D[:, [k]] + D[[k], :])
    return D


def central_diff(f, arr, eps=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    out = np.zeros_like(arr)
    for idx in itertools.product(*(range(s) for s in arr.shape)):
        old = arr[idx]
        arr[idx] = old + eps
        hi = f()
        arr[idx] = old - eps
        lo = f()
        arr[idx] = old
        out[idx] = (hi - lo) / (2 * eps)
    return out


def max_rel_err(analytic, numeric, floor=1e-6):
    """Largest elementwise relative error over entries with magnitude >= floor."""
    a = np.asarray(analytic, dtype=float).ravel()
    b = np.asarray(numeric, dtype=float).ravel()
    big = np.maximum(np.abs(a), np.abs(b)) >= floor
    if not big.any():
        return 0.0
    return float(np.max(np.abs(a[big] - b[big]) / np.maximum(np.abs(a[big]), np.abs(b[big]))))
