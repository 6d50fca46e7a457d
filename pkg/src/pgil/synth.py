"""Seeded synthetic complex SAR scenes with known classes and scattering mechanisms.

Polarimetric pixels are zero-mean circular complex Gaussian scattering vectors
whose covariance is the coherency matrix of the generating mechanism.
Single-channel scenes add point targets whose spectra are shaped per sub-band
of a :class:`~pgil.xm.tfa.FilterBank`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .rasters import ComplexImage
from .xm.tfa import FilterBank

HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-12


@dataclass
class CoherencySpec:
    """Expected outer product ``E[k k^H]`` of a mechanism's scattering vector."""

    matrix: np.ndarray
    name: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.complex128)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] not in (2, 3):
            raise ValueError(f"coherency matrix must be 2x2 or 3x3, got {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL:
            raise ValueError(f"coherency matrix {self.name!r} is not Hermitian")
        lam = np.linalg.eigvalsh(m)
        if lam.min() < -PSD_TOL:
            raise ValueError(f"coherency matrix {self.name!r} is not PSD "
                             f"(min eigenvalue {lam.min():.3e})")
        self.matrix = m

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def factor(self) -> np.ndarray:
        """``L`` with ``L L^H = matrix`` (works for singular matrices)."""
        lam, vec = np.linalg.eigh(self.matrix)
        return vec * np.sqrt(np.clip(lam, 0.0, None))[None, :]


def _circular_normal(rng, shape):
    z = rng.standard_normal(shape + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)


def sample_scattering_vector(spec: CoherencySpec, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw ``k`` (or ``size`` of them along leading axes) with ``E[k k^H] = spec.matrix``."""
    shape = () if size is None else tuple(np.atleast_1d(size))
    z = _circular_normal(rng, shape + (spec.dim,))
    return z @ spec.factor().T


# Canonical mechanisms in the Pauli basis (unit trace).
PRESETS = {
    "surface": CoherencySpec(np.diag([0.92, 0.06, 0.02]), "surface"),
    "double-bounce": CoherencySpec(np.diag([0.06, 0.92, 0.02]), "double-bounce"),
    "volume": CoherencySpec(np.eye(3) / 3.0, "volume"),
    "rough-surface": CoherencySpec(np.diag([0.72, 0.18, 0.10]), "rough-surface"),
    "vegetation": CoherencySpec(np.diag([0.45, 0.35, 0.20]), "vegetation"),
}


@dataclass
class PointTarget:
    row: int
    col: int
    amplitude: float
    signature: np.ndarray  # (n_r, n_a) complex gains per sub-band


@dataclass
class ClassSpec:
    """Mixture of mechanisms for one semantic class.

    ``mixture`` holds ``(mechanism index, weight)`` pairs. ``blob_scale`` > 0
    draws the per-pixel mechanism from a smoothed random field (correlation
    length in pixels) instead of independently per pixel; ``texture_looks``
    multiplies the intensity by a unit-mean gamma texture with that shape;
    ``power`` scales the coherency matrices; ``background_power`` is the
    speckle power of single-channel scenes.
    """

    mixture: list
    power: float = 1.0
    blob_scale: float = 0.0
    texture_looks: float | None = None
    background_power: float = 1.0
    targets: list = field(default_factory=list)

    def __post_init__(self):
        w = np.array([wt for _, wt in self.mixture], dtype=np.float64)
        if self.mixture and (np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9):
            raise ValueError("mixture weights must be non-negative and sum to 1")


@dataclass
class SceneLayout:
    height: int
    width: int
    regions: list          # [((r0, c0, r1, c1), class_id), ...] half-open rectangles
    classes: dict          # class_id -> ClassSpec
    mechanisms: list = field(default_factory=list)  # CoherencySpec per mechanism id

    def validate(self):
        if not self.regions:
            raise ValueError("scene layout has no regions")
        cover = np.zeros((self.height, self.width), dtype=np.int64)
        for (r0, c0, r1, c1), cid in self.regions:
            if cid not in self.classes:
                raise ValueError(f"region refers to unknown class {cid}")
            if not (0 <= r0 < r1 <= self.height and 0 <= c0 < c1 <= self.width):
                raise ValueError(f"region {(r0, c0, r1, c1)} outside the raster")
            cover[r0:r1, c0:c1] += 1
        if np.any(cover != 1):
            raise ValueError("regions must tile the raster exactly once")
        dims = {m.dim for m in self.mechanisms}
        if len(dims) > 1:
            raise ValueError("mechanisms mix 2x2 and 3x3 matrices")
        for cid, spec in self.classes.items():
            for mid, _ in spec.mixture:
                if not 0 <= mid < len(self.mechanisms):
                    raise ValueError(f"class {cid} refers to unknown mechanism {mid}")

    @property
    def dim(self) -> int:
        return self.mechanisms[0].dim


@dataclass
class PolScene:
    images: list           # one ComplexImage per scattering-vector component
    truth: np.ndarray      # semantic class id per pixel
    mechanism: np.ndarray  # generating mechanism id per pixel

    @property
    def channels(self) -> int:
        return len(self.images)

    def vectors(self) -> np.ndarray:
        """Scattering vectors stacked as ``(height, width, channels)``."""
        return np.stack([im.data for im in self.images], axis=-1)


def _component_map(spec: ClassSpec, shape, rng) -> np.ndarray:
    ids = np.array([m for m, _ in spec.mixture], dtype=np.int64)
    cdf = np.cumsum([w for _, w in spec.mixture])
    if spec.blob_scale > 0:
        g = gaussian_filter(rng.standard_normal(shape), spec.blob_scale, mode="wrap")
        ranks = np.argsort(np.argsort(g, axis=None, kind="stable"), kind="stable")
        u = (ranks.reshape(shape) + 0.5) / g.size
    else:
        u = rng.random(shape)
    pick = np.minimum(np.searchsorted(cdf, u, side="right"), len(ids) - 1)
    return ids[pick]


def generate_polsar_scene(layout: SceneLayout, seed: int) -> PolScene:
    """Per-pixel scattering vectors drawn from each region's class mixture."""
    layout.validate()
    if not layout.mechanisms:
        raise ValueError("polarimetric scene needs mechanisms")
    h, w, d = layout.height, layout.width, layout.dim
    truth = np.zeros((h, w), dtype=np.int64)
    mech = np.zeros((h, w), dtype=np.int64)
    k = np.zeros((h, w, d), dtype=np.complex128)
    factors = [m.factor() for m in layout.mechanisms]
    streams = np.random.SeedSequence(seed).spawn(len(layout.regions))
    for ((r0, c0, r1, c1), cid), ss in zip(layout.regions, streams):
        spec = layout.classes[cid]
        rng = np.random.default_rng(ss)
        shape = (r1 - r0, c1 - c0)
        comp = _component_map(spec, shape, rng)
        z = _circular_normal(rng, shape + (d,))
        kr = np.zeros(shape + (d,), dtype=np.complex128)
        for mid in np.unique(comp):
            sel = comp == mid
            kr[sel] = z[sel] @ factors[mid].T
        kr *= np.sqrt(spec.power)
        if spec.texture_looks:
            nu = spec.texture_looks
            kr *= np.sqrt(rng.gamma(nu, 1.0 / nu, size=shape))[..., None]
        truth[r0:r1, c0:c1] = cid
        mech[r0:r1, c0:c1] = comp
        k[r0:r1, c0:c1] = kr
    images = [ComplexImage(k[..., i]) for i in range(d)]
    return PolScene(images, truth, mech)


def target_spectrum(signature: np.ndarray, bank: FilterBank, shape) -> np.ndarray:
    """Frequency response ``sum_b signature_b * w_b`` on the FFT grid of ``shape``."""
    sig = np.asarray(signature, dtype=np.complex128)
    if sig.shape != (bank.n_r, bank.n_a):
        raise ValueError(f"signature grid {sig.shape} does not match filter bank "
                         f"({bank.n_r}, {bank.n_a})")
    return np.tensordot(sig.reshape(-1), bank.windows(shape), axes=1)


def generate_slc_scene(layout: SceneLayout, seed: int, bank: FilterBank | None = None) -> ComplexImage:
    """Single-channel scene: class speckle background plus spectrum-shaped point targets.

    A target with a flat signature over a complete disjoint bank is an exact
    impulse of its amplitude at its position.
    """
    layout.validate()
    h, w = layout.height, layout.width
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    img = np.zeros((h, w), dtype=np.complex128)
    for (r0, c0, r1, c1), cid in layout.regions:
        p = layout.classes[cid].background_power
        z = _circular_normal(rng, (r1 - r0, c1 - c0))
        if p > 0:
            img[r0:r1, c0:c1] = np.sqrt(p) * z
    targets = [t for spec in layout.classes.values() for t in spec.targets]
    if targets and bank is None:
        raise ValueError("point targets need a filter bank to shape their spectra")
    fr = np.fft.fftfreq(h)[:, None]
    fc = np.fft.fftfreq(w)[None, :]
    acc = np.zeros((h, w), dtype=np.complex128)
    cache = {}
    for t in targets:
        key = np.asarray(t.signature, dtype=np.complex128).tobytes()
        if key not in cache:
            cache[key] = target_spectrum(t.signature, bank, (h, w))
        acc += t.amplitude * cache[key] * np.exp(-2j * np.pi * (fr * t.row + fc * t.col))
    if targets:
        img += np.fft.ifft2(acc)
    return ComplexImage(img)


def estimate_coherency(scene: PolScene | np.ndarray, window: int) -> np.ndarray:
    """Boxcar multilook of ``k k^H`` with a window clamped at the borders.

    Accepts a :class:`PolScene` or scattering vectors ``(..., h, w, d)``;
    returns ``(..., h, w, d, d)`` Hermitian matrices.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    k = scene.vectors() if isinstance(scene, PolScene) else np.asarray(scene, dtype=np.complex128)
    h, w, d = k.shape[-3:]
    if window > h or window > w:
        raise ValueError(f"window {window} larger than raster {h}x{w}")
    iu = np.triu_indices(d)
    upper = k[..., iu[0]] * k[..., iu[1]].conj()
    half = window // 2
    upper = _box_mean(upper, half, axis=-3)
    upper = _box_mean(upper, half, axis=-2)
    out = np.empty(k.shape[:-1] + (d, d), dtype=np.complex128)
    out[..., iu[0], iu[1]] = upper
    out[..., iu[1], iu[0]] = upper.conj()
    diag = np.arange(d)
    out[..., diag, diag] = out[..., diag, diag].real
    return out


def _box_mean(a: np.ndarray, half: int, axis: int) -> np.ndarray:
    if half == 0:
        return a
    n = a.shape[axis]
    a = np.moveaxis(a, axis, 0)
    cs = np.concatenate([np.zeros((1,) + a.shape[1:], dtype=a.dtype), np.cumsum(a, axis=0)])
    idx = np.arange(n)
    lo = np.clip(idx - half, 0, n)
    hi = np.clip(idx + half + 1, 0, n)
    out = (cs[hi] - cs[lo]) / (hi - lo).reshape((-1,) + (1,) * (a.ndim - 1))
    return np.moveaxis(out, 0, axis)


def layout_from_json(doc: dict | str) -> SceneLayout:
    """Build a layout from the JSON schema documented in the README."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    mechs = []
    for m in doc.get("mechanisms", []):
        if isinstance(m, str):
            mechs.append(PRESETS[m])
        else:
            re = np.asarray(m["real"], dtype=np.float64)
            im = np.asarray(m.get("imag", np.zeros_like(re)), dtype=np.float64)
            mechs.append(CoherencySpec(re + 1j * im, m.get("name", "")))
    classes = {}
    for cid, c in doc["classes"].items():
        targets = [PointTarget(t["row"], t["col"], t["amplitude"],
                               np.asarray(t["signature_real"], dtype=np.float64)
                               + 1j * np.asarray(t.get("signature_imag", 0.0)))
                   for t in c.get("targets", [])]
        classes[int(cid)] = ClassSpec(
            mixture=[(int(m), float(wt)) for m, wt in c.get("mixture", [])],
            power=c.get("power", 1.0), blob_scale=c.get("blob_scale", 0.0),
            texture_looks=c.get("texture_looks"), background_power=c.get("background_power", 1.0),
            targets=targets)
    regions = [(tuple(r["rect"]), int(r["class"])) for r in doc["regions"]]
    return SceneLayout(doc["height"], doc["width"], regions, classes, mechs)
