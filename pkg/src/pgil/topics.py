"""Bag-of-topics guidance signals from scattering-label maps.

Words are normalized label histograms of small crops, the vocabulary is their
k-means codebook, a document counts the codewords of a tiled label map, and a
collapsed Gibbs LDA turns documents into topic mixtures (BoT vectors).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from . import blobs
from .kmeans import assign, kmeans
from .rasters import INVALID_LABEL, ScatteringLabelMap

DEFAULT_CROP = 8
DEFAULT_STEP = 4
SPARSITY_EPS = 1e-4


def _labels_of(label_map):
    if isinstance(label_map, ScatteringLabelMap):
        return np.asarray(label_map.labels), label_map.n_classes
    raise TypeError("expected a ScatteringLabelMap")


def crop_histograms(crops: np.ndarray, n_labels: int) -> np.ndarray:
    """Normalized label histograms of ``(n, c, c)`` crops; invalid pixels are skipped."""
    flat = crops.reshape(crops.shape[0], -1).astype(np.int64)
    counts = np.zeros((flat.shape[0], n_labels))
    valid = flat != INVALID_LABEL
    rows = np.broadcast_to(np.arange(flat.shape[0])[:, None], flat.shape)
    np.add.at(counts, (rows[valid], flat[valid]), 1.0)
    tot = counts.sum(axis=1, keepdims=True)
    empty = tot[:, 0] == 0
    counts[empty] = 1.0
    tot[empty] = n_labels
    return counts / tot


def extract_word_vectors(label_map: ScatteringLabelMap, count: int, rng: np.random.Generator,
                         crop: int = DEFAULT_CROP) -> np.ndarray:
    """``count`` histograms of uniformly placed ``crop x crop`` windows, ``(count, n_s)``."""
    labels, n_s = _labels_of(label_map)
    h, w = labels.shape
    if h < crop or w < crop:
        raise ValueError(f"label map {h}x{w} smaller than crop {crop}")
    r = rng.integers(0, h - crop + 1, size=count)
    c = rng.integers(0, w - crop + 1, size=count)
    ii = r[:, None, None] + np.arange(crop)[None, :, None]
    jj = c[:, None, None] + np.arange(crop)[None, None, :]
    return crop_histograms(labels[ii, jj], n_s)


@dataclass
class Vocabulary:
    centers: np.ndarray            # (n_words, n_labels)
    seed: int = 0
    inertia_trace: list = field(default_factory=list)
    duplicated_centers: bool = False

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    def assign(self, words: np.ndarray) -> np.ndarray:
        return assign(np.asarray(words, dtype=np.float64), self.centers)

    def save(self, path) -> str:
        return blobs.save(path, {"centers": self.centers},
                          {"n_words": self.size, "n_labels": int(self.centers.shape[1]),
                           "seed": self.seed, "duplicated_centers": self.duplicated_centers},
                          "vocabulary")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        arrays, meta = blobs.load(path, "vocabulary")
        return cls(arrays["centers"], meta["seed"], [], meta["duplicated_centers"])


def build_vocabulary(words: np.ndarray, n_words: int, seed: int = 0, max_iter: int = 100) -> Vocabulary:
    words = np.asarray(words, dtype=np.float64)
    if words.shape[0] < n_words:
        raise ValueError(f"{words.shape[0]} words cannot form a vocabulary of {n_words}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        res = kmeans(words, n_words, seed=seed, max_iter=max_iter)
    if res.duplicated_centers:
        warnings.warn(f"fewer distinct words than n_words={n_words}; vocabulary has "
                      "duplicated centers", RuntimeWarning)
    for w in caught:
        if "duplicated" not in str(w.message):
            warnings.warn(w.message, w.category)
    return Vocabulary(res.centers, seed, res.inertia_trace, res.duplicated_centers)


def tile_histograms(label_map: ScatteringLabelMap, crop: int = DEFAULT_CROP,
                    step: int = DEFAULT_STEP) -> np.ndarray:
    labels, n_s = _labels_of(label_map)
    if labels.shape[0] < crop or labels.shape[1] < crop:
        raise ValueError(f"label map {labels.shape} smaller than crop {crop}")
    win = np.lib.stride_tricks.sliding_window_view(labels, (crop, crop))[::step, ::step]
    return crop_histograms(win.reshape(-1, crop, crop), n_s)


def encode_document(label_map: ScatteringLabelMap, vocab: Vocabulary, crop: int = DEFAULT_CROP,
                    step: int = DEFAULT_STEP) -> np.ndarray:
    """Codeword counts ``(n_words,)`` of the tiled label map."""
    words = vocab.assign(tile_histograms(label_map, crop, step))
    return np.bincount(words, minlength=vocab.size).astype(np.int64)


# ---------------------------------------------------------------- collapsed Gibbs LDA

@numba.njit(cache=True)
def _train_sweep(doc_of, word_of, z, ndk, nwk, nk, alpha, beta, vbeta, u):
    K = nk.shape[0]
    cum = np.empty(K)
    for i in range(z.shape[0]):
        d = doc_of[i]
        w = word_of[i]
        k = z[i]
        ndk[d, k] -= 1
        nwk[w, k] -= 1
        nk[k] -= 1
        total = 0.0
        for t in range(K):
            total += (ndk[d, t] + alpha) * (nwk[w, t] + beta) / (nk[t] + vbeta)
            cum[t] = total
        r = u[i] * total
        k = 0
        while k < K - 1 and cum[k] <= r:
            k += 1
        z[i] = k
        ndk[d, k] += 1
        nwk[w, k] += 1
        nk[k] += 1


@numba.njit(cache=True)
def _infer_sweep(doc_of, word_of, z, ndk, phi_wk, alpha, u):
    K = phi_wk.shape[1]
    cum = np.empty(K)
    for i in range(z.shape[0]):
        d = doc_of[i]
        w = word_of[i]
        k = z[i]
        ndk[d, k] -= 1
        total = 0.0
        for t in range(K):
            total += (ndk[d, t] + alpha) * phi_wk[w, t]
            cum[t] = total
        r = u[i] * total
        k = 0
        while k < K - 1 and cum[k] <= r:
            k += 1
        z[i] = k
        ndk[d, k] += 1


def _tokens(counts: np.ndarray):
    """Expand a ``(n_docs, n_words)`` count matrix into token arrays."""
    counts = np.asarray(counts, dtype=np.int64)
    d_idx, w_idx = np.nonzero(counts)
    reps = counts[d_idx, w_idx]
    return np.repeat(d_idx, reps), np.repeat(w_idx, reps)


@dataclass
class LdaModel:
    topic_word: np.ndarray   # (K, n_words), rows on the simplex
    alpha: float
    beta: float
    iterations: int
    seed: int

    @property
    def n_topics(self) -> int:
        return self.topic_word.shape[0]

    @property
    def n_words(self) -> int:
        return self.topic_word.shape[1]

    def save(self, path) -> str:
        return blobs.save(path, {"topic_word": self.topic_word},
                          {"n_topics": self.n_topics, "n_words": self.n_words, "alpha": self.alpha,
                           "beta": self.beta, "iterations": self.iterations, "seed": self.seed},
                          "lda")

    @classmethod
    def load(cls, path) -> "LdaModel":
        arrays, m = blobs.load(path, "lda")
        return cls(arrays["topic_word"], m["alpha"], m["beta"], m["iterations"], m["seed"])


def default_alpha(n_topics: int) -> float:
    return 50.0 / n_topics


def train_lda(corpus: np.ndarray, n_topics: int, alpha: float | None = None, beta: float = 0.01,
              iterations: int = 500, seed: int = 0, check_every: int = 10) -> LdaModel:
    """Collapsed Gibbs sampling on a ``(n_words, n_docs)`` corpus matrix.

    The topic-word matrix is taken from the final-state counts with ``beta``
    smoothing. Count tables are audited against the token total every
    ``check_every`` sweeps.
    """
    corpus = np.asarray(corpus)
    if corpus.ndim != 2 or corpus.size == 0:
        raise ValueError("corpus must be a non-empty (n_words, n_docs) matrix")
    if n_topics < 2:
        raise ValueError("need at least 2 topics")
    if np.any(corpus < 0) or corpus.sum() == 0:
        raise ValueError("corpus must hold non-negative counts with at least one token")
    alpha = default_alpha(n_topics) if alpha is None else float(alpha)
    n_words, n_docs = corpus.shape
    doc_of, word_of = _tokens(corpus.T)
    n_tok = doc_of.size
    rng = np.random.default_rng(seed)
    z = rng.integers(0, n_topics, size=n_tok)
    ndk = np.zeros((n_docs, n_topics), dtype=np.int64)
    nwk = np.zeros((n_words, n_topics), dtype=np.int64)
    np.add.at(ndk, (doc_of, z), 1)
    np.add.at(nwk, (word_of, z), 1)
    nk = nwk.sum(axis=0)
    vbeta = n_words * beta
    for it in range(iterations):
        _train_sweep(doc_of, word_of, z, ndk, nwk, nk, alpha, beta, vbeta, rng.random(n_tok))
        if (it + 1) % check_every == 0:
            check_counts(ndk, nwk, nk, n_tok)
    check_counts(ndk, nwk, nk, n_tok)
    tw = (nwk.T + beta) / (nk[:, None] + vbeta)
    tw /= tw.sum(axis=1, keepdims=True)
    return LdaModel(tw, alpha, beta, iterations, seed)


def check_counts(ndk, nwk, nk, n_tokens):
    if not (ndk.sum() == nwk.sum() == nk.sum() == n_tokens) or ndk.min() < 0 or nwk.min() < 0:
        raise RuntimeError("Gibbs count tables out of sync with the token count")
    if not np.array_equal(nwk.sum(axis=0), nk):
        raise RuntimeError("topic totals disagree with the word-topic table")


def infer_bots(docs: np.ndarray, model: LdaModel, burn_in: int = 50, samples: int = 50,
               seed: int = 0) -> np.ndarray:
    """Topic mixtures ``(n_docs, K)`` for ``(n_docs, n_words)`` count rows.

    Gibbs sampling against the fixed topic-word matrix; the result is the mean
    of the per-sample topic proportions after burn-in, so every row sums to 1
    and topics never sampled get exactly zero. Empty documents get a uniform
    mixture.
    """
    docs = np.atleast_2d(np.asarray(docs, dtype=np.int64))
    if docs.shape[1] != model.n_words:
        raise ValueError(f"documents have {docs.shape[1]} words, model has {model.n_words}")
    if samples < 1:
        raise ValueError("need at least one post-burn-in sample")
    K = model.n_topics
    lengths = docs.sum(axis=1)
    out = np.full((docs.shape[0], K), 1.0 / K)
    if np.any(lengths == 0):
        warnings.warn(f"{int(np.sum(lengths == 0))} empty documents get a uniform mixture",
                      RuntimeWarning)
    live = np.flatnonzero(lengths > 0)
    if live.size == 0:
        return out
    sub = docs[live]
    doc_of, word_of = _tokens(sub)
    rng = np.random.default_rng(seed)
    z = rng.integers(0, K, size=doc_of.size)
    ndk = np.zeros((live.size, K), dtype=np.int64)
    np.add.at(ndk, (doc_of, z), 1)
    phi_wk = np.ascontiguousarray(model.topic_word.T)
    acc = np.zeros((live.size, K))
    for it in range(burn_in + samples):
        _infer_sweep(doc_of, word_of, z, ndk, phi_wk, model.alpha, rng.random(doc_of.size))
        if it >= burn_in:
            acc += ndk
    theta = acc / (samples * lengths[live][:, None])
    out[live] = theta / theta.sum(axis=1, keepdims=True)
    return out


def infer_bot(doc: np.ndarray, model: LdaModel, burn_in: int = 50, samples: int = 50,
              seed: int = 0) -> np.ndarray:
    return infer_bots(np.asarray(doc)[None, :], model, burn_in, samples, seed)[0]


def bot_sparsity(bot: np.ndarray, eps: float = SPARSITY_EPS) -> np.ndarray:
    """``1 - ||bot||_0 / K`` with entries above ``eps`` counted as non-zero."""
    bot = np.asarray(bot)
    return 1.0 - np.count_nonzero(bot > eps, axis=-1) / bot.shape[-1]
