"""H/alpha decomposition, nine-zone partition and iterative complex Wishart refinement.

All routines accept stacks of Hermitian matrices with shape ``(..., d, d)``
where ``d`` is 2 (dual-pol analog) or 3 (full-pol coherency).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..rasters import INVALID_LABEL, ScatteringLabelMap

HALPHA_ZONES = 9

# zone boundaries: entropy breaks, then alpha breaks (degrees) per entropy band
H_BREAKS = (0.5, 0.9)
ALPHA_BREAKS = {"low": (42.5, 47.5), "mid": (40.0, 50.0), "high": (40.0, 55.0)}

JACOBI_TOL = 1e-12


def jacobi_eigh(T: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 50):
    """Cyclic Jacobi eigen-decomposition for stacks of small Hermitian matrices.

    Returns ``(eigenvalues, eigenvectors)`` sorted in descending eigenvalue
    order; ``eigenvectors[..., :, i]`` belongs to ``eigenvalues[..., i]``.
    Sweeps stop once every off-diagonal modulus is below ``tol`` times the
    Frobenius norm of the matrix.
    """
    A = np.array(T, dtype=np.complex128, copy=True)
    d = A.shape[-1]
    batch = A.shape[:-2]
    A = A.reshape(-1, d, d)
    V = np.broadcast_to(np.eye(d, dtype=np.complex128), A.shape).copy()
    scale = np.sqrt(np.einsum("nij,nij->n", A, A.conj()).real)
    thresh = tol * np.maximum(scale, np.finfo(float).tiny)
    pairs = [(p, q) for p in range(d - 1) for q in range(p + 1, d)]
    for _ in range(max_sweeps):
        off = max(np.max(np.abs(A[:, p, q]) / thresh) for p, q in pairs)
        if off <= 1.0:
            break
        for p, q in pairs:
            apq = A[:, p, q]
            r = np.abs(apq)
            act = r > thresh
            if not np.any(act):
                continue
            e = np.where(act, apq / np.where(act, r, 1.0), 1.0)
            app, aqq = A[:, p, p].real, A[:, q, q].real
            theta = (aqq - app) / (2.0 * np.where(act, r, 1.0))
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(theta == 0.0, 1.0, t)
            t = np.where(act, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            # J = U R with U = diag(1, conj(e)) on (p, q); A <- J^H A J, V <- V J
            Jpp, Jpq = c, s
            Jqp, Jqq = -s * e.conj(), c * e.conj()
            Ap, Aq = A[:, :, p].copy(), A[:, :, q].copy()
            A[:, :, p] = Ap * Jpp[:, None] + Aq * Jqp[:, None]
            A[:, :, q] = Ap * Jpq[:, None] + Aq * Jqq[:, None]
            Ap, Aq = A[:, p, :].copy(), A[:, q, :].copy()
            A[:, p, :] = Ap * np.conj(Jpp)[:, None] + Aq * np.conj(Jqp)[:, None]
            A[:, q, :] = Ap * np.conj(Jpq)[:, None] + Aq * np.conj(Jqq)[:, None]
            A[:, p, q] = 0.0
            A[:, q, p] = 0.0
            Vp, Vq = V[:, :, p].copy(), V[:, :, q].copy()
            V[:, :, p] = Vp * Jpp[:, None] + Vq * Jqp[:, None]
            V[:, :, q] = Vp * Jpq[:, None] + Vq * Jqq[:, None]
    w = np.einsum("nii->ni", A).real
    order = np.argsort(-w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    V = np.take_along_axis(V, order[:, None, :], axis=-1)
    return w.reshape(*batch, d), V.reshape(*batch, d, d)


@dataclass
class HAlphaResult:
    entropy: np.ndarray
    alpha: np.ndarray
    no_signal: np.ndarray


def h_alpha_decompose(T: np.ndarray) -> HAlphaResult:
    """Eigenvalue entropy (log base ``d``) and mean alpha angle in degrees.

    Matrices with non-positive trace yield ``H = alpha = 0`` and are flagged in
    ``no_signal``.
    """
    T = np.asarray(T)
    d = T.shape[-1]
    if d not in (2, 3) or T.shape[-2] != d:
        raise ValueError(f"expected (..., 2, 2) or (..., 3, 3) matrices, got {T.shape}")
    lam, vec = jacobi_eigh(T)
    lam = np.clip(lam, 0.0, None)
    total = lam.sum(axis=-1)
    no_signal = ~(np.einsum("...ii->...", T).real > 0) | ~(total > 0)
    p = lam / np.where(no_signal, 1.0, total)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    H = -plogp.sum(axis=-1) / np.log(d)
    alphas = np.degrees(np.arccos(np.clip(np.abs(vec[..., 0, :]), 0.0, 1.0)))
    alpha = (p * alphas).sum(axis=-1)
    H = np.where(no_signal, 0.0, np.clip(H, 0.0, 1.0))
    alpha = np.where(no_signal, 0.0, alpha)
    if np.any(no_signal):
        warnings.warn(f"{int(np.sum(no_signal))} matrices with no signal (trace <= 0)", RuntimeWarning)
    return HAlphaResult(H, alpha, no_signal)


def h_alpha_zone(H, alpha):
    """Zone id in 1..9 (lower edges inclusive).

    1/2/3: high entropy, multiple/vegetation/surface; 4/5/6: medium entropy;
    7/8/9: low entropy dihedral/dipole/surface. The high-entropy surface
    corner (zone 3) is not reachable by physical coherency matrices and is
    folded into zone 2.
    """
    H = np.asarray(H, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any((H < 0) | (H > 1) | (alpha < 0) | (alpha > 90)):
        warnings.warn("H/alpha outside valid range; clamped", RuntimeWarning)
    H = np.clip(H, 0.0, 1.0)
    alpha = np.clip(alpha, 0.0, 90.0)
    band = np.where(H >= H_BREAKS[1], 0, np.where(H >= H_BREAKS[0], 1, 2))
    zone = np.zeros(np.broadcast(H, alpha).shape, dtype=np.int64)
    for b, key in enumerate(("high", "mid", "low")):
        lo, hi = ALPHA_BREAKS[key]
        z = np.where(alpha >= hi, 1, np.where(alpha >= lo, 2, 3)) + 3 * b
        zone = np.where(band == b, z, zone)
    zone = np.where(zone == 3, 2, zone)
    return zone if zone.ndim else int(zone)


def _regularize(Sigma: np.ndarray):
    d = Sigma.shape[-1]
    lam = np.linalg.eigvalsh(Sigma)
    tr = np.trace(Sigma).real
    singular = bool(lam.min() <= 1e-12 * max(tr, np.finfo(float).tiny))
    if singular:
        Sigma = Sigma + (1e-6 * tr / d if tr > 0 else 1e-12) * np.eye(d)
    return Sigma, singular


def wishart_distance(T: np.ndarray, Sigma: np.ndarray, return_flag: bool = False):
    """``ln|Sigma| + tr(Sigma^-1 T)`` for one center and a stack of ``T``.

    A singular center is ridge-regularized by ``1e-6 * tr(Sigma) / d``.
    """
    Sigma, singular = _regularize(np.asarray(Sigma, dtype=np.complex128))
    inv = np.linalg.inv(Sigma)
    logdet = np.log(np.linalg.det(Sigma).real)
    # tr(inv @ T) = sum_ij inv_ij T_ji
    d = logdet + np.einsum("ij,...ji->...", inv, T).real
    return (d, singular) if return_flag else d


@dataclass
class WishartCenters:
    matrices: np.ndarray
    counts: np.ndarray

    @property
    def active(self) -> np.ndarray:
        return self.counts > 0


def class_centers(field: np.ndarray, labels: np.ndarray, n_classes: int) -> WishartCenters:
    d = field.shape[-1]
    flat = field.reshape(-1, d, d)
    lab = labels.reshape(-1)
    ok = lab != INVALID_LABEL
    counts = np.bincount(lab[ok], minlength=n_classes)
    sums = np.zeros((n_classes, d, d), dtype=np.complex128)
    np.add.at(sums, lab[ok], flat[ok])
    mats = sums / np.maximum(counts, 1)[:, None, None]
    return WishartCenters(mats, counts)


def wishart_classify(field: np.ndarray, init: ScatteringLabelMap, max_iter: int = 10,
                     min_changed_fraction: float = 1e-3) -> ScatteringLabelMap:
    """Iterate class-mean re-estimation and minimum Wishart distance reassignment.

    ``field`` has shape ``(..., d, d)`` matching ``init.labels``. Classes that
    become empty keep their last center and stay frozen. The number of
    changed pixels per iteration is recorded in ``meta["changed"]``.
    """
    labels = np.asarray(init.labels).astype(np.int64).copy()
    if field.shape[:-2] != labels.shape:
        raise ValueError(f"field {field.shape[:-2]} and labels {labels.shape} disagree")
    n = init.n_classes
    valid = labels != INVALID_LABEL
    n_valid = int(valid.sum())
    changed_trace, singular_any = [], False
    centers = class_centers(field, labels, n)
    frozen = centers.matrices.copy()
    degenerate = False
    it = 0
    for it in range(1, max_iter + 1):
        centers = class_centers(field, labels, n)
        active = centers.active
        frozen[active] = centers.matrices[active]
        dist = np.full(labels.shape + (n,), np.inf)
        for m in np.flatnonzero(active):
            dist[..., m], sing = wishart_distance(field, frozen[m], return_flag=True)
            singular_any |= sing
        new = np.where(valid, np.argmin(dist, axis=-1), labels)
        changed = int(np.sum(new != labels))
        changed_trace.append(changed)
        labels = new
        if it == 1 and np.unique(labels[valid]).size <= 1:
            degenerate = True
        if changed < min_changed_fraction * max(n_valid, 1):
            break
    final = class_centers(field, labels, n)
    return ScatteringLabelMap(labels.astype(np.uint8), n, "h-alpha-wishart",
                              meta={"iterations": it, "changed": changed_trace,
                                    "degenerate": degenerate, "regularized": singular_any,
                                    "counts": final.counts.tolist()})


def halpha_labels(field: np.ndarray) -> ScatteringLabelMap:
    """Nine-zone H/alpha label map (labels are ``zone - 1``)."""
    res = h_alpha_decompose(field)
    zones = h_alpha_zone(res.entropy, res.alpha)
    labels = np.where(res.no_signal, INVALID_LABEL, zones - 1).astype(np.uint8)
    return ScatteringLabelMap(labels, HALPHA_ZONES, "h-alpha")


def halpha_wishart(field: np.ndarray, max_iter: int = 10,
                   min_changed_fraction: float = 1e-3) -> ScatteringLabelMap:
    """H/alpha zoning followed by Wishart refinement."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        init = halpha_labels(field)
    return wishart_classify(field, init, max_iter, min_changed_fraction)


def wishart_assign(field: np.ndarray, centers: WishartCenters) -> np.ndarray:
    """Minimum Wishart distance labels against fixed, active class centers."""
    active = np.flatnonzero(centers.active)
    if active.size == 0:
        raise ValueError("no active Wishart centers")
    dist = np.stack([wishart_distance(field, centers.matrices[m]) for m in active], axis=-1)
    return active[np.argmin(dist, axis=-1)].astype(np.uint8)
