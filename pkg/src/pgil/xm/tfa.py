"""Sub-band scattering patterns from 2-D time-frequency analysis of complex SAR.

Axis convention: image rows carry the azimuth frequency ``f_a`` and columns the
range frequency ``f_r``. A pattern is a vector of length ``n_r * n_a`` indexed
as ``i_r * n_a + i_a``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..kmeans import assign, kmeans
from ..rasters import ComplexImage, ScatteringLabelMap

TFA_CLASSES = 15
_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class FilterBank:
    """Grid of separable band-pass filters in normalized frequency (cycles/sample)."""

    centers_r: tuple
    centers_a: tuple
    bandwidth_r: float
    bandwidth_a: float
    kind: str = "rect"

    def __post_init__(self):
        if self.kind not in ("rect", "raised-cosine"):
            raise ValueError(f"unknown window kind {self.kind!r}")
        if not self.centers_r or not self.centers_a:
            raise ValueError("filter bank grid is empty")
        for centers, bw in ((self.centers_r, self.bandwidth_r), (self.centers_a, self.bandwidth_a)):
            if not 0.0 < bw <= 1.0:
                raise ValueError(f"bandwidth must lie in (0, 1], got {bw}")
            for c in centers:
                if c - bw / 2 < -0.5 - _EDGE_TOL or c + bw / 2 > 0.5 + _EDGE_TOL:
                    raise ValueError(f"passband centered at {c} with width {bw} exceeds Nyquist")

    @property
    def n_r(self) -> int:
        return len(self.centers_r)

    @property
    def n_a(self) -> int:
        return len(self.centers_a)

    @property
    def size(self) -> int:
        return self.n_r * self.n_a

    def _response(self, freqs, center, bw):
        d = freqs - center
        if self.kind == "rect":
            return ((d >= -bw / 2 - _EDGE_TOL) & (d < bw / 2 - _EDGE_TOL)).astype(np.float64)
        w = 0.5 * (1.0 + np.cos(2.0 * np.pi * d / bw))
        return np.where(np.abs(d) < bw / 2, w, 0.0)

    def windows(self, shape) -> np.ndarray:
        """All filter responses on the FFT grid of ``shape``: ``(n_r * n_a, rows, cols)``."""
        f_rows = np.fft.fftfreq(shape[0])
        f_cols = np.fft.fftfreq(shape[1])
        wr = np.stack([self._response(f_cols, c, self.bandwidth_r) for c in self.centers_r])
        wa = np.stack([self._response(f_rows, c, self.bandwidth_a) for c in self.centers_a])
        # (n_r, n_a, rows, cols)
        w = wa[None, :, :, None] * wr[:, None, None, :]
        return w.reshape(self.size, shape[0], shape[1])


def _centers(n, bw):
    if n == 1:
        return (0.0,)
    return tuple(float(c) for c in np.linspace(-0.5 + bw / 2, 0.5 - bw / 2, n))


def build_filter_bank(n_r: int, n_a: int, bandwidth, kind: str = "rect") -> FilterBank:
    """Uniform filter grid whose outermost passbands touch +-Nyquist.

    ``bandwidth`` is a scalar or an ``(range, azimuth)`` pair. Overlap between
    neighbouring passbands beyond 100 % of the center spacing is rejected.
    """
    if n_r < 1 or n_a < 1:
        raise ValueError("filter grid needs n_r, n_a >= 1")
    bw_r, bw_a = (bandwidth, bandwidth) if np.isscalar(bandwidth) else bandwidth
    for n, bw in ((n_r, bw_r), (n_a, bw_a)):
        if not 0.0 < bw <= 1.0:
            raise ValueError(f"bandwidth must lie in (0, 1], got {bw}")
        if n > 1:
            spacing = (1.0 - bw) / (n - 1)
            if spacing <= 0 or bw > 2.0 * spacing + _EDGE_TOL:
                raise ValueError(f"{n} passbands of width {bw} overlap by more than 100%")
    return FilterBank(_centers(n_r, bw_r), _centers(n_a, bw_a), float(bw_r), float(bw_a), kind)


def extract_segment(image: ComplexImage, row: int, col: int, size: int):
    """Square segment centered at ``(row, col)`` (center index ``size // 2``).

    Returns ``(segment, clamped)``; samples outside the image are zero.
    """
    data = image.data if isinstance(image, ComplexImage) else np.asarray(image)
    h, w = data.shape
    r0, c0 = row - size // 2, col - size // 2
    seg = np.zeros((size, size), dtype=np.complex128)
    rs, re = max(r0, 0), min(r0 + size, h)
    cs, ce = max(c0, 0), min(c0 + size, w)
    clamped = (rs, re, cs, ce) != (r0, r0 + size, c0, c0 + size)
    if rs < re and cs < ce:
        seg[rs - r0:re - r0, cs - c0:ce - c0] = data[rs:re, cs:ce]
    return seg, clamped


def subband_pattern(image: ComplexImage, row: int, col: int, segment_size: int,
                    bank: FilterBank) -> np.ndarray:
    """Magnitude at the segment center of each band-pass filtered copy of the segment."""
    seg, clamped = extract_segment(image, row, col, segment_size)
    if clamped:
        warnings.warn(f"segment at ({row}, {col}) zero-padded at the image border", RuntimeWarning)
    spec = np.fft.fft2(seg)
    c = segment_size // 2
    out = np.empty(bank.size)
    for b, w in enumerate(bank.windows(seg.shape)):
        out[b] = np.abs(np.fft.ifft2(spec * w)[c, c])
    return out


def subband_patterns(image: ComplexImage, points, segment_size: int, bank: FilterBank) -> np.ndarray:
    """Batched patterns for ``points`` (``(n, 2)`` rows/cols), shape ``(n, bank.size)``.

    Only the center sample of each inverse transform is needed, so it is
    evaluated directly as one inverse-DFT term.
    """
    points = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    segs = np.stack([extract_segment(image, r, c, segment_size)[0] for r, c in points])
    spec = np.fft.fft2(segs)
    s = segment_size
    c = s // 2
    k = np.arange(s)
    ramp = np.exp(2j * np.pi * k * c / s)
    phase = ramp[:, None] * ramp[None, :]
    w = bank.windows((s, s))
    vals = np.einsum("gij,bij->gb", spec * phase, w) / (s * s)
    return np.abs(vals)


def subband_energies(segment: np.ndarray, bank: FilterBank) -> np.ndarray:
    """Energy of each filtered copy of ``segment`` (spatial domain)."""
    spec = np.fft.fft2(segment)
    return np.array([np.sum(np.abs(np.fft.ifft2(spec * w)) ** 2)
                     for w in bank.windows(segment.shape)])


def pattern_grid(height: int, width: int, segment_size: int, stride: int):
    """Grid centers whose segments lie fully inside the image."""
    half = segment_size // 2
    rows = np.arange(half, height - segment_size + half + 1, stride)
    cols = np.arange(half, width - segment_size + half + 1, stride)
    return rows, cols


def tfa_label_map(image: ComplexImage, bank: FilterBank, segment_size: int = 32,
                  stride: int = 4, n_clusters: int = TFA_CLASSES, seed: int = 0,
                  max_iter: int = 100) -> ScatteringLabelMap:
    """Cluster L2-normalized sub-band patterns on a stride grid into scattering labels."""
    if n_clusters < 2:
        raise ValueError("n_clusters must be >= 2")
    rows, cols = pattern_grid(image.height, image.width, segment_size, stride)
    if rows.size * cols.size < n_clusters:
        raise ValueError(f"{rows.size * cols.size} grid points cannot form {n_clusters} clusters")
    pts = np.stack(np.meshgrid(rows, cols, indexing="ij"), axis=-1).reshape(-1, 2)
    pats = subband_patterns(image, pts, segment_size, bank)
    norm = np.linalg.norm(pats, axis=1, keepdims=True)
    pats = np.divide(pats, norm, out=np.zeros_like(pats), where=norm > 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = kmeans(pats, n_clusters, seed=seed, max_iter=max_iter)
    labels = res.labels.reshape(rows.size, cols.size).astype(np.uint8)
    return ScatteringLabelMap(labels, n_clusters, "tfa-kmeans",
                              meta={"grid_rows": rows.tolist(), "grid_cols": cols.tolist(),
                                    "duplicated_centers": res.duplicated_centers})


def tfa_label_maps(images, bank: FilterBank, segment_size: int = 32, stride: int = 4,
                   n_clusters: int = TFA_CLASSES, seed: int = 0, max_iter: int = 100,
                   fit=None) -> list:
    """Joint TFA labelling of equally sized images with one shared set of clusters.

    Cluster centers are fitted on the images flagged in ``fit`` (all by
    default) and every image is labelled by its nearest center.
    """
    images = list(images)
    if not images:
        raise ValueError("no images")
    h, w = images[0].height, images[0].width
    if any((im.height, im.width) != (h, w) for im in images):
        raise ValueError("images must share one size")
    rows, cols = pattern_grid(h, w, segment_size, stride)
    pts = np.stack(np.meshgrid(rows, cols, indexing="ij"), axis=-1).reshape(-1, 2)
    pats = np.stack([subband_patterns(im, pts, segment_size, bank) for im in images])
    norm = np.linalg.norm(pats, axis=-1, keepdims=True)
    pats = np.divide(pats, norm, out=np.zeros_like(pats), where=norm > 0)
    fit = np.ones(len(images), dtype=bool) if fit is None else np.asarray(fit, dtype=bool)
    train = pats[fit].reshape(-1, pats.shape[-1])
    if train.shape[0] < n_clusters:
        raise ValueError(f"{train.shape[0]} patterns cannot form {n_clusters} clusters")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = kmeans(train, n_clusters, seed=seed, max_iter=max_iter)
    labels = assign(pats.reshape(-1, pats.shape[-1]), res.centers).reshape(len(images), rows.size, cols.size)
    meta = {"grid_rows": rows.tolist(), "grid_cols": cols.tolist(),
            "duplicated_centers": res.duplicated_centers}
    return [ScatteringLabelMap(lab.astype(np.uint8), n_clusters, "tfa-kmeans", meta=dict(meta))
            for lab in labels]
