"""Masked topic-guidance loss and the classification loss with optional guidance term."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

CONSTRAINTS = ("soft", "hard")


def sample_activation_mask(y_phy, alpha: float, p_a: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(p_a) activation on topics with ``y_phy >= alpha``, zero elsewhere."""
    if not (0.0 <= alpha <= 1.0 and 0.0 <= p_a <= 1.0):
        raise ValueError(f"alpha and p_a must lie in [0, 1], got {alpha}, {p_a}")
    y = np.asarray(y_phy, dtype=np.float64)
    keep = rng.random(y.shape) < p_a
    return ((y >= alpha) & keep).astype(np.float64)


def _as_batch(a):
    a = np.asarray(a, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


def pgn_loss(y_phy, phi: Tensor, delta, constraint: str = "soft") -> Tensor:
    """Masked cross-entropy between topic mixtures and softmax scores, batch-averaged.

    ``soft``: ``-sum_k delta_k y_k log softmax(phi)_k``.
    ``hard``: additionally ``+ sum_{delta_k = 0} y_k log softmax(phi)_k``, which
    pushes probability away from non-activated topics.
    """
    if constraint not in CONSTRAINTS:
        raise ValueError(f"constraint must be one of {CONSTRAINTS}, got {constraint!r}")
    phi = T.as_tensor(phi)
    if phi.ndim == 1:
        phi = _reshape_row(phi)
    y, d = _as_batch(y_phy), _as_batch(delta)
    if y.shape != phi.shape or d.shape != phi.shape:
        raise ShapeError("pgn_loss", y.shape, phi.shape, d.shape)
    w = -d * y
    if constraint == "hard":
        w = w + (1.0 - d) * y
    return T.weighted_sum(T.log_softmax(phi), w / phi.shape[0])


def _reshape_row(t: Tensor) -> Tensor:
    def back(g):
        T._accum(t, g.reshape(t.shape))
    return T._result(t.data[None, :], (t,), back, "reshape")


def cross_entropy(scores: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(scores)."""
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or labels.shape != (scores.shape[0],):
        raise ShapeError("cross_entropy", scores.shape, labels.shape)
    if labels.min() < 0 or labels.max() >= scores.shape[1]:
        raise ValueError("label outside class range")
    onehot = np.zeros(scores.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    return T.weighted_sum(T.log_softmax(scores), -onehot / labels.size)


def pin_loss(scores: Tensor, labels, phi: Tensor | None = None, y_phy=None, delta=None,
             lam: float = 0.0, constraint: str = "soft") -> Tensor:
    """Cross-entropy plus ``lam`` times the guidance loss when ``phi`` is supplied."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    ce = cross_entropy(scores, labels)
    if phi is None or lam == 0.0:
        return ce
    return T.add(ce, T.scale(pgn_loss(y_phy, phi, delta, constraint), lam))
