"""Similarity-graph clustering on the symmetric normalized Laplacian with
automatic cluster-count selection via the largest eigengap.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_MAX_AUTO_K = 16
_KMEANS_RESTARTS = 20
_KMEANS_ITERS = 100


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric nonnegative pairwise similarities; zero diagonal permitted."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValidationError("similarity matrix must be square")
        if not np.all(np.isfinite(v)):
            raise ValidationError("similarity matrix contains non-finite values")
        if v.size and np.abs(v - v.T).max() > 1e-9:
            raise ValidationError("similarity matrix must be symmetric")
        if v.size and v.min() < 0:
            raise ValidationError("similarities must be nonnegative")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ClusterResult:
    labels: np.ndarray
    k: int
    eigenvalues: np.ndarray


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[i] = points[idx]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    k = min(k, n)
    best_labels, best_inertia = None, np.inf
    for _ in range(_KMEANS_RESTARTS):
        centers = _kmeans_pp_init(points, k, rng)
        labels = np.zeros(n, dtype=np.int64)
        for _ in range(_KMEANS_ITERS):
            d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = d2.argmin(axis=1)
            for c in range(k):
                members = new_labels == c
                if members.any():
                    centers[c] = points[members].mean(axis=0)
                else:
                    # revive an empty cluster at the worst-fit point
                    centers[c] = points[d2.min(axis=1).argmax()]
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
        inertia = float(((points - centers[labels]) ** 2).sum())
        if inertia < best_inertia - 1e-12:
            best_inertia, best_labels = inertia, labels
    return best_labels


def _compact(labels: np.ndarray) -> np.ndarray:
    """Relabel to 0..K-1 in order of first appearance."""
    out = np.empty_like(labels)
    mapping = {}
    for i, lab in enumerate(labels):
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def cluster(sim: SimilarityMatrix, k_override: int | None = None, seed: int = 0) -> ClusterResult:
    """Partition items by spectral clustering of their similarity graph.

    Zero-degree items are split off as singleton clusters first.  On the
    remainder the symmetric normalized Laplacian is built, the cluster count
    is k_override if given, else the index of the largest gap in the lowest
    eigenvalues (capped at 16), and items are embedded into the leading
    eigenvectors, row-normalized, and partitioned by seeded k-means with 20
    restarts keeping the best inertia.
    """
    if k_override is not None and k_override < 1:
        raise ValidationError("cluster count override must be >= 1")
    n = sim.n
    if n == 0:
        return ClusterResult(np.zeros(0, dtype=np.int64), 0, np.zeros(0))
    S = (sim.values + sim.values.T) / 2.0

    degree = S.sum(axis=1)
    isolated = degree <= 0.0
    sub = np.flatnonzero(~isolated)
    n_iso = int(isolated.sum())

    labels = np.full(n, -1, dtype=np.int64)
    labels[isolated] = np.arange(n_iso)

    if sub.size == 0:
        eigenvalues = np.zeros(min(n, _MAX_AUTO_K))
        return ClusterResult(_compact(labels), n, eigenvalues)

    Ssub = S[np.ix_(sub, sub)]
    dsub = degree[sub]
    inv_sqrt = 1.0 / np.sqrt(dsub)
    lap = np.eye(sub.size) - inv_sqrt[:, None] * Ssub * inv_sqrt[None, :]
    lap = (lap + lap.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(lap)

    m = min(sub.size, _MAX_AUTO_K)
    if k_override is not None:
        k_sub = max(1, min(k_override - n_iso, sub.size)) if n_iso else min(k_override, sub.size)
        k_sub = min(k_sub, max(m, 1))
    elif m <= 1:
        k_sub = 1
    else:
        gaps = np.diff(eigvals[:m])
        k_sub = int(gaps.argmax()) + 1

    embed = eigvecs[:, :k_sub]
    norms = np.linalg.norm(embed, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    embed = embed / safe[:, None]

    rng = np.random.default_rng(seed)
    if k_sub == 1:
        sub_labels = np.zeros(sub.size, dtype=np.int64)
    else:
        sub_labels = _kmeans(embed, k_sub, rng)
    labels[sub] = sub_labels + n_iso

    # reported spectrum: isolated components contribute zero eigenvalues
    full_spectrum = np.sort(np.concatenate([np.zeros(n_iso), eigvals]))
    eigenvalues = full_spectrum[: min(n, _MAX_AUTO_K)]

    final = _compact(labels)
    return ClusterResult(final, int(final.max()) + 1, eigenvalues)
