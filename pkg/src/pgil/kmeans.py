"""Seeded k-means with k-means++ seeding, shared by the vocabulary, TFA and diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int
    inertia_trace: list = field(default_factory=list)
    duplicated_centers: bool = False


def _sq_dist_to(X, c):
    d = X - c
    return np.einsum("ij,ij->i", d, d)


def kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator):
    """Pick ``k`` seed indices with D^2 weighting.

    Returns ``(indices, duplicated)``; ``duplicated`` is set when the data has
    fewer than ``k`` distinct points and some seeds had to repeat.
    """
    n = X.shape[0]
    idx = np.empty(k, dtype=np.int64)
    idx[0] = rng.integers(n)
    d2 = _sq_dist_to(X, X[idx[0]])
    duplicated = False
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            duplicated = True
            idx[j] = rng.integers(n)
        else:
            # cumulative search keeps the draw stable under tiny weight changes
            r = rng.random() * total
            idx[j] = min(int(np.searchsorted(np.cumsum(d2), r, side="right")), n - 1)
        d2 = np.minimum(d2, _sq_dist_to(X, X[idx[j]]))
    return idx, duplicated


def assign(X: np.ndarray, centers: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Nearest-center labels by Euclidean distance (ties go to the lower index)."""
    c2 = np.einsum("ij,ij->i", centers, centers)
    out = np.empty(X.shape[0], dtype=np.int64)
    for s in range(0, X.shape[0], chunk):
        xb = X[s:s + chunk]
        d = c2[None, :] - 2.0 * xb @ centers.T
        out[s:s + chunk] = np.argmin(d, axis=1)
    return out


def inertia_of(X, centers, labels) -> float:
    d = X - centers[labels]
    return float(np.einsum("ij,ij->", d, d))


def kmeans(X, k: int, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    """Lloyd iterations from k-means++ seeds.

    Empty clusters are reseeded from the points farthest from their current
    center. Stops when the assignment no longer changes or at ``max_iter``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("kmeans expects a 2-D (n_samples, n_features) array")
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"need at least k={k} samples, got {n}")
    rng = np.random.default_rng(seed)
    seeds, duplicated = kmeans_plus_plus(X, k, rng)
    if duplicated:
        warnings.warn(f"fewer than {k} distinct points; duplicated centers", RuntimeWarning)
    centers = X[seeds].copy()
    labels = assign(X, centers)
    trace = [inertia_of(X, centers, labels)]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size and not duplicated:
            far = np.argsort(-_sq_dist_to_assigned(X, centers, labels), kind="stable")
            centers[empty] = X[far[: empty.size]]
        new_labels = assign(X, centers)
        trace.append(inertia_of(X, centers, new_labels))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return KMeansResult(centers, labels, trace[-1], n_iter, trace, duplicated)


def _sq_dist_to_assigned(X, centers, labels):
    d = X - centers[labels]
    return np.einsum("ij,ij->i", d, d)
