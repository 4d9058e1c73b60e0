"""Random-walk structure statistics and the SGCN demographic-parity bound.

For a linear GCN with weights ``W`` the gap between group-mean logits is bounded by

    sum_a ||W||_2 * ( |beta[a,a] - beta[!a,a]| * ||mu_a - mu_!a||_2
                      + 2 sqrt(d) * sum_a' delta_a' )

where ``beta`` are average K-step walk probabilities of ending inside group ``a``
and ``delta`` bounds how far features stray from their group mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import AttributedGraph


@dataclass(frozen=True)
class RandomWalkStats:
    walk: np.ndarray        # Ã, (n, n) row-stochastic
    beta_in: np.ndarray     # beta[a, a] per group
    beta_out: np.ndarray    # beta[!a, a] per group
    K: int

    @property
    def beta_in_out(self) -> np.ndarray:
        """beta[a, !a]: walks from group a that end outside it."""
        return 1.0 - self.beta_in


@dataclass(frozen=True)
class GroupFeatureStats:
    mean: np.ndarray        # mu_a, (zeta, d)
    mean_rest: np.ndarray   # mu_!a, (zeta, d)
    dev: np.ndarray         # dev(V_a)
    dev_rest: np.ndarray    # dev(V_!a)

    @property
    def delta(self) -> np.ndarray:
        return np.maximum(self.dev, self.dev_rest)


def _group_masks(g: AttributedGraph):
    for a in range(g.zeta):
        inside = g.sensitive == a
        yield a, inside, ~inside


def random_walk_matrix(g: AttributedGraph, K: int) -> RandomWalkStats:
    """K-step walk matrix of the self-loop-augmented chain ``(D+I)^{-1}(A+I)``."""
    if K < 0:
        raise ValueError("K must be >= 0")
    T = g.mean_aggregation_matrix().toarray()
    walk = np.linalg.matrix_power(T, K) if K else np.eye(g.n)
    beta_in = np.zeros(g.zeta)
    beta_out = np.zeros(g.zeta)
    for a, inside, rest in _group_masks(g):
        into_a = walk[:, inside].sum(axis=1)
        if inside.any():
            beta_in[a] = into_a[inside].mean()
        if rest.any():
            beta_out[a] = into_a[rest].mean()
    return RandomWalkStats(walk, beta_in, beta_out, K)


def group_feature_stats(g: AttributedGraph, x: np.ndarray | None = None) -> GroupFeatureStats:
    x = g.features if x is None else np.asarray(x, dtype=np.float64)
    z, d = g.zeta, x.shape[1]
    mean = np.zeros((z, d))
    mean_rest = np.zeros((z, d))
    dev = np.zeros(z)
    dev_rest = np.zeros(z)
    for a, inside, rest in _group_masks(g):
        if inside.any():
            mean[a] = x[inside].mean(axis=0)
            dev[a] = np.abs(x[inside] - mean[a]).max()
        if rest.any():
            mean_rest[a] = x[rest].mean(axis=0)
            dev_rest[a] = np.abs(x[rest] - mean_rest[a]).max()
    return GroupFeatureStats(mean, mean_rest, dev, dev_rest)


def spectral_norm(W, iters: int = 100, tol: float = 1e-10) -> float:
    """Largest singular value of ``W`` by power iteration on ``W^T W``."""
    W = np.asarray(W, dtype=np.float64)
    if W.size == 0:
        return 0.0
    M = W.T @ W
    v = np.ones(M.shape[0]) + 1e-3 * np.arange(M.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = M @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        new = float(v @ M @ v)
        if abs(new - lam) <= tol * max(new, 1.0):
            lam = new
            break
        lam = new
    return float(np.sqrt(max(lam, 0.0)))


def empirical_dp(g: AttributedGraph, W, K: int) -> float:
    """Sum over groups of the L2 distance between mean SGCN logits inside and outside the group."""
    from .gcn import sgcn_forward

    logits = sgcn_forward(g, W, K)
    total = 0.0
    for a, inside, rest in _group_masks(g):
        if not inside.any() or not rest.any():
            raise ValueError(f"group {a} or its complement is empty")
        total += float(np.linalg.norm(logits[inside].mean(axis=0) - logits[rest].mean(axis=0)))
    return total


def dp_upper_bound(g: AttributedGraph, W, K: int, stats: RandomWalkStats | None = None) -> float:
    stats = stats or random_walk_matrix(g, K)
    feats = group_feature_stats(g)
    present = [a for a, inside, rest in _group_masks(g) if inside.any() and rest.any()]
    wnorm = spectral_norm(W)
    delta_sum = float(feats.delta[present].sum())
    slack = 2.0 * np.sqrt(g.d) * delta_sum
    total = 0.0
    for a in present:
        gap = abs(stats.beta_in[a] - stats.beta_out[a])
        total += wnorm * (gap * float(np.linalg.norm(feats.mean[a] - feats.mean_rest[a])) + slack)
    return total


def balancedness(g: AttributedGraph) -> tuple[np.ndarray, float]:
    """Per-node largest gap between neighbor counts of any two groups, and its mean."""
    c = g.group_counts
    gap = (c.max(axis=1) - c.min(axis=1)).astype(np.int64)
    return gap, float(gap.mean()) if g.n else 0.0


def random_instance(rng: np.random.Generator, max_n: int = 12, max_d: int = 4):
    """Small random graph with two non-empty groups, random weights and K in {1, 2}."""
    n = int(rng.integers(3, max_n + 1))
    d = int(rng.integers(1, max_d + 1))
    s = rng.permutation(np.resize([0, 1], n))
    p = rng.uniform(0.1, 0.9)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    x = rng.normal(size=(n, d)) * rng.uniform(0.1, 3.0)
    x[s == 1] += rng.normal(size=d)
    g = AttributedGraph(x, s, np.zeros(n, dtype=np.int64), edges, zeta=2)
    W = rng.normal(size=(d, 2)) * rng.uniform(0.1, 3.0)
    K = int(rng.integers(1, 3))
    return g, W, K


def verify_bound(trials: int, seed: int = 0, tol: float = 1e-8) -> list[dict]:
    """Empirical gap vs bound on ``trials`` random instances, one row each."""
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(trials):
        g, W, K = random_instance(rng)
        lhs = empirical_dp(g, W, K)
        rhs = dp_upper_bound(g, W, K)
        rows.append({"trial": t, "n": g.n, "d": g.d, "K": K, "edges": g.num_edges,
                     "l_dp": lhs, "bound": rhs, "slack": rhs - lhs, "ok": lhs <= rhs + tol})
    return rows


__all__ = ["random_instance", "verify_bound", "RandomWalkStats", "GroupFeatureStats", "random_walk_matrix", "group_feature_stats",
           "spectral_norm", "empirical_dp", "dp_upper_bound", "balancedness"]
