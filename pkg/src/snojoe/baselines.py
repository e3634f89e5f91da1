"""Baseline OOD scores: MSP, MaxLogit, ODIN, Mahalanobis, LOF, Isolation Forest.

Every scorer returns larger-is-more-in-distribution values. The
logit-based scores adapt their multi-class ancestors to the multi-label
setting with label-wise sigmoids (there is no softmax across labels
here). The feature-based scores (Mahalanobis, LOF, Isolation Forest)
are fit on training penultimate features and score queries in the same
space; neighbor search is exact brute force.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from snojoe.model import predict_proba
from snojoe.seeding import make_rng

LOF_ZERO_DISTANCE_SCALE = 1e-6


def msp_score(logits) -> float:
    """Maximum label-wise sigmoid probability."""
    return float(np.max(predict_proba(logits)))


def maxlogit_score(logits) -> float:
    """Maximum raw logit."""
    f = np.asarray(logits, dtype=np.float64)
    if f.size == 0:
        raise ValueError("logits must be nonempty")
    return float(np.max(f))


def odin_score(logits_fn, x, temperature: float = 1000.0, epsilon: float = 0.0, grad_fn=None) -> float:
    """Temperature-scaled max sigmoid, optionally after one signed-gradient
    input perturbation of size ``epsilon`` toward a higher max score.

    ``grad_fn(x, label) -> d logit_label / d x`` must be supplied when
    epsilon > 0; with epsilon = 0 and temperature = 1 this reduces
    exactly to ``msp_score``.
    """
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    if epsilon < 0.0:
        raise ValueError("epsilon must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    f = np.asarray(logits_fn(x), dtype=np.float64)
    if epsilon > 0.0:
        if grad_fn is None:
            raise ValueError("epsilon > 0 requires a differentiable scorer (grad_fn)")
        j = int(np.argmax(f))
        x = x + epsilon * np.sign(grad_fn(x, j))
        f = np.asarray(logits_fn(x), dtype=np.float64)
    return float(np.max(predict_proba(f / temperature)))


# ---------------------------------------------------------------------------
# Mahalanobis
# ---------------------------------------------------------------------------


@dataclass
class MahalanobisModel:
    """Per-label feature means with a shared (pooled, ridged) covariance."""

    label_means: np.ndarray  # (K, d)
    shared_covariance_inverse: np.ndarray  # (d, d)
    ridge_lambda: float


def mahalanobis_fit(features, labels, ridge_lambda: float = 1e-6) -> MahalanobisModel:
    """Fit one Gaussian mean per label (over samples where that label is
    active) and a covariance pooled over all (label, sample) pairs, plus
    ridge_lambda * (trace/d) * I."""
    Z = np.asarray(features, dtype=np.float64)
    Y = np.asarray(labels)
    if ridge_lambda <= 0.0:
        raise ValueError("ridge_lambda must be positive")
    d = Z.shape[1]
    k = Y.shape[1]
    counts = Y.sum(axis=0)
    thin = np.flatnonzero(counts < 2)
    if thin.size:
        raise ValueError(f"labels {thin.tolist()} have fewer than 2 active training samples")

    means = np.vstack([Z[Y[:, i] == 1].mean(axis=0) for i in range(k)])
    cov = np.zeros((d, d))
    total = 0
    for i in range(k):
        resid = Z[Y[:, i] == 1] - means[i]
        cov += resid.T @ resid
        total += resid.shape[0]
    cov /= total
    cov += ridge_lambda * (np.trace(cov) / d) * np.eye(d)
    try:
        np.linalg.cholesky(cov)
        inv = np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        raise ValueError("singular covariance despite ridge") from None
    return MahalanobisModel(label_means=means, shared_covariance_inverse=inv, ridge_lambda=ridge_lambda)


def mahalanobis_score(m: MahalanobisModel, feature) -> float:
    """Negated squared Mahalanobis distance to the closest label mean."""
    z = np.asarray(feature, dtype=np.float64)
    diffs = m.label_means - z
    d2 = np.einsum("kd,de,ke->k", diffs, m.shared_covariance_inverse, diffs)
    return float(-np.min(d2))


# ---------------------------------------------------------------------------
# Local Outlier Factor
# ---------------------------------------------------------------------------


@dataclass
class NeighborIndex:
    """Brute-force neighbor index over training features with the cached
    per-point k-distances and local reachability densities."""

    points: np.ndarray  # (n, d)
    k: int
    kdist: np.ndarray  # (n,)
    lrd: np.ndarray  # (n,)
    zero_replacement: float  # 0.0 when the fit set has no positive distance


def _nearest(dist_row: np.ndarray, k: int, skip: int | None = None) -> np.ndarray:
    """Indices of the k smallest entries, ties broken by index; ``skip``
    excludes a self-index."""
    order = np.argsort(dist_row, kind="stable")
    if skip is not None:
        order = order[order != skip]
    return order[:k]


def lof_fit(features, k: int) -> NeighborIndex:
    P = np.asarray(features, dtype=np.float64)
    n = P.shape[0]
    if k < 2:
        raise ValueError("k must be >= 2")
    if k >= n:
        raise ValueError(f"k must be smaller than the number of points ({n})")

    D = cdist(P, P)  # exact zeros for identical rows, unlike the Gram trick
    off = ~np.eye(n, dtype=bool)
    positive = D[off & (D > 0.0)]
    replacement = float(positive.min()) * LOF_ZERO_DISTANCE_SCALE if positive.size else 0.0
    if replacement > 0.0:
        D = np.where(off & (D == 0.0), replacement, D)

    neighbors = np.vstack([_nearest(D[i], k, skip=i) for i in range(n)])
    kdist = D[np.arange(n)[:, None], neighbors][:, -1]
    if replacement == 0.0:  # every fit point identical; densities are moot
        lrd = np.ones(n)
    else:
        reach = np.maximum(kdist[neighbors], D[np.arange(n)[:, None], neighbors])
        lrd = 1.0 / reach.mean(axis=1)
    return NeighborIndex(points=P, k=k, kdist=kdist, lrd=lrd, zero_replacement=replacement)


def lof_score(idx: NeighborIndex, z) -> float:
    """Negated local outlier factor of ``z`` against the fit set.

    Zero distances use the fit-set replacement value; if no positive
    distance exists anywhere (identical data, identical query), the LOF
    is defined as 1.
    """
    z = np.asarray(z, dtype=np.float64)
    dz = cdist(z[None, :], idx.points)[0]
    replacement = idx.zero_replacement
    if replacement == 0.0:
        positive = dz[dz > 0.0]
        if not positive.size:
            return -1.0
        replacement = float(positive.min()) * LOF_ZERO_DISTANCE_SCALE
    dz = np.where(dz == 0.0, replacement, dz)
    neigh = _nearest(dz, idx.k)
    reach = np.maximum(idx.kdist[neigh], dz[neigh])
    lrd_z = 1.0 / reach.mean()
    return float(-idx.lrd[neigh].mean() / lrd_z)


# ---------------------------------------------------------------------------
# Isolation Forest
# ---------------------------------------------------------------------------


@dataclass
class IsolationForestModel:
    trees: list
    subsample_size: int
    num_trees: int
    seed: int
    harmonic: np.ndarray  # cumulative 1 + 1/2 + ... + 1/i


def _avg_path_length(n: int, harmonic: np.ndarray) -> float:
    """Average unsuccessful-search path length c(n) of a BST with n nodes."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * harmonic[n - 1] - 2.0 * (n - 1) / n


def _build_tree(X: np.ndarray, depth: int, limit: int, rng: np.random.Generator):
    n = X.shape[0]
    if n <= 1 or depth >= limit:
        return ("leaf", n)
    spread = np.flatnonzero(X.min(axis=0) < X.max(axis=0))
    if spread.size == 0:  # all remaining points identical
        return ("leaf", n)
    q = int(rng.choice(spread))
    lo, hi = float(X[:, q].min()), float(X[:, q].max())
    t = float(rng.uniform(lo, hi))
    mask = X[:, q] < t
    return (
        "split",
        q,
        t,
        _build_tree(X[mask], depth + 1, limit, rng),
        _build_tree(X[~mask], depth + 1, limit, rng),
    )


def iforest_fit(features, num_trees: int = 100, subsample_size: int = 256, seed: int = 0) -> IsolationForestModel:
    """Grow ``num_trees`` random axis-aligned partition trees on seeded
    subsamples (without replacement), each height-capped at
    ceil(log2(subsample_size))."""
    X = np.asarray(features, dtype=np.float64)
    n = X.shape[0]
    size = min(subsample_size, n)
    if num_trees < 1:
        raise ValueError("num_trees must be positive")
    if size < 2:
        raise ValueError("need at least 2 points per subsample to fit an isolation forest")
    rng = make_rng(seed)
    limit = max(1, math.ceil(math.log2(size)))
    trees = [
        _build_tree(X[rng.choice(n, size=size, replace=False)], 0, limit, rng)
        for _ in range(num_trees)
    ]
    hmax = max(size, 2)
    harmonic = np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, hmax + 1))])
    return IsolationForestModel(
        trees=trees, subsample_size=size, num_trees=num_trees, seed=seed, harmonic=harmonic
    )


def _path_length(tree, z: np.ndarray, harmonic: np.ndarray) -> float:
    depth = 0.0
    node = tree
    while node[0] == "split":
        _, q, t, left, right = node
        node = left if z[q] < t else right
        depth += 1.0
    # Truncated leaves stand in for the subtree they would have grown.
    return depth + _avg_path_length(node[1], harmonic)


def iforest_score(m: IsolationForestModel, z) -> float:
    """Negated anomaly score -s(z), s(z) = 2^(-E[h(z)] / c(subsample))."""
    z = np.asarray(z, dtype=np.float64)
    mean_path = sum(_path_length(t, z, m.harmonic) for t in m.trees) / m.num_trees
    s = 2.0 ** (-mean_path / _avg_path_length(m.subsample_size, m.harmonic))
    return float(-s)
