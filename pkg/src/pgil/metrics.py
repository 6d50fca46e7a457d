"""Evaluation: pooled-feature linear probe, k-means silhouette score and classification reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .kmeans import kmeans


def pool_features(fmap) -> np.ndarray:
    """Channel-wise spatial mean of an ``(N, C, H, W)`` map."""
    f = np.asarray(fmap, dtype=np.float64)
    if f.ndim != 4:
        raise ValueError(f"expected a 4-D feature map, got shape {f.shape}")
    return f.mean(axis=(2, 3))


@dataclass
class ProbeModel:
    """One-vs-rest linear max-margin classifier on standardized features."""

    weights: np.ndarray
    biases: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    classes: np.ndarray
    reg: float

    def decision(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.std
        return Z @ self.weights.T + self.biases

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.decision(X), axis=1)]


def fit_linear_probe(features, labels, reg: float = 1e-3, epochs: int = 100, seed: int = 0,
                     eta0: float = 0.1) -> ProbeModel:
    """SGD on the L2-regularized hinge loss, one binary problem per class.

    Features are standardized by training mean and std (zero-variance columns
    keep unit scale). The step is ``1 / (reg * (t + t0))`` with ``t0`` chosen so
    the first step equals ``eta0``; the bias is not regularized.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError(f"features {X.shape} and labels {y.shape} disagree")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("linear probe needs at least two classes")
    if reg <= 0:
        raise ValueError("reg must be > 0")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    Z = (X - mean) / std
    n, d = Z.shape
    Y = np.where(y[:, None] == classes[None, :], 1.0, -1.0)
    W = np.zeros((classes.size, d))
    b = np.zeros(classes.size)
    rng = np.random.default_rng(seed)
    t0 = 1.0 / (reg * eta0)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            eta = 1.0 / (reg * (t + t0))
            t += 1
            margin = Y[i] * (W @ Z[i] + b)
            viol = margin < 1.0
            W *= 1.0 - eta * reg
            if viol.any():
                W[viol] += eta * Y[i, viol, None] * Z[i][None, :]
                b[viol] += eta * Y[i, viol]
    return ProbeModel(W, b, mean, std, classes, reg)


def kmeans_cluster(vectors, k: int, seed: int = 0, max_iter: int = 300) -> np.ndarray:
    X = np.asarray(vectors, dtype=np.float64)
    if len(X) < k:
        raise ValueError(f"need at least k={k} vectors, got {len(X)}")
    return kmeans(X, k, seed=seed, max_iter=max_iter).labels


def silhouette_score(vectors, cluster_labels, chunk: int = 1024) -> float:
    """Mean silhouette with Euclidean distances; members of singleton clusters score 0."""
    X = np.asarray(vectors, dtype=np.float64)
    lab = np.asarray(cluster_labels)
    if len(X) != len(lab):
        raise ValueError("vectors and labels differ in length")
    uniq, inv = np.unique(lab, return_inverse=True)
    if uniq.size < 2:
        raise ValueError("silhouette needs at least two clusters")
    counts = np.bincount(inv)
    sq = np.einsum("ij,ij->i", X, X)
    s = np.zeros(len(X))
    for start in range(0, len(X), chunk):
        sl = slice(start, start + chunk)
        d2 = sq[sl, None] + sq[None, :] - 2.0 * X[sl] @ X.T
        D = np.sqrt(np.maximum(d2, 0.0))
        D[np.arange(D.shape[0]), np.arange(start, start + D.shape[0])] = 0.0
        sums = np.zeros((D.shape[0], uniq.size))
        for c in range(uniq.size):
            sums[:, c] = D[:, inv == c].sum(axis=1)
        own = inv[sl]
        rows = np.arange(D.shape[0])
        n_own = counts[own]
        a = sums[rows, own] / np.maximum(n_own - 1, 1)
        other = sums / counts[None, :]
        other[rows, own] = np.inf
        bb = other.min(axis=1)
        denom = np.maximum(a, bb)
        val = np.where(denom > 0, (bb - a) / np.where(denom > 0, denom, 1.0), 0.0)
        s[sl] = np.where(n_own > 1, val, 0.0)
    return float(s.mean())


@dataclass
class MetricsReport:
    oa: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_f1: float
    confusion: np.ndarray
    class_names: list = field(default_factory=list)
    zero_division: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "oa": self.oa, "macro_f1": self.macro_f1,
            "precision": self.precision.tolist(), "recall": self.recall.tolist(),
            "f1": self.f1.tolist(), "support": self.support.tolist(),
            "confusion": self.confusion.tolist(), "class_names": list(self.class_names),
            "zero_division": list(self.zero_division),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "precision", "recall", "f1", "support"])
        for i, name in enumerate(self.class_names):
            w.writerow([name, f"{self.precision[i]:.6f}", f"{self.recall[i]:.6f}",
                        f"{self.f1[i]:.6f}", int(self.support[i])])
        w.writerow(["macro", "", "", f"{self.macro_f1:.6f}", int(self.support.sum())])
        w.writerow(["overall_accuracy", "", "", f"{self.oa:.6f}", int(self.support.sum())])
        return buf.getvalue()


def _safe_div(num, den, what, names, flags):
    out = np.zeros_like(num, dtype=np.float64)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    flags.extend(f"{what}:{names[i]}" for i in np.flatnonzero(~ok))
    return out


def classification_report(pred, truth, n_classes: int | None = None, class_names=None) -> MetricsReport:
    """OA, per-class precision/recall/F1, macro F1 and confusion matrix (rows = truth).

    Undefined ratios are set to 0 and listed in ``zero_division``.
    """
    p = np.asarray(pred, dtype=np.int64)
    t = np.asarray(truth, dtype=np.int64)
    if p.shape != t.shape:
        raise ValueError("pred and truth differ in length")
    if p.size == 0:
        raise ValueError("empty input")
    k = n_classes if n_classes is not None else int(max(p.max(), t.max())) + 1
    names = list(class_names) if class_names is not None else [str(i) for i in range(k)]
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    tp = np.diag(cm).astype(np.float64)
    flags: list = []
    precision = _safe_div(tp, cm.sum(axis=0).astype(float), "precision", names, flags)
    recall = _safe_div(tp, cm.sum(axis=1).astype(float), "recall", names, flags)
    f1 = _safe_div(2 * precision * recall, precision + recall, "f1", names, flags)
    return MetricsReport(float(tp.sum() / cm.sum()), precision, recall, f1, cm.sum(axis=1),
                         float(f1.mean()), cm, names, flags)


def features_to_csv(features, labels=None) -> str:
    """Feature matrix as CSV (optional leading label column) for external visualization."""
    X = np.asarray(features, dtype=np.float64)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ([] if labels is None else ["label"]) + [f"f{i}" for i in range(X.shape[1])]
    w.writerow(head)
    for i, row in enumerate(X):
        w.writerow(([] if labels is None else [labels[i]]) + [repr(float(v)) for v in row])
    return buf.getvalue()
