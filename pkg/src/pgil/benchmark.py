"""Seven-class polarimetric patch benchmark with nested few-label splits.

Each patch is an independent 64x64 scene whose pixels draw from a class
specific mixture of scattering mechanisms arranged in spatially correlated
blobs. The network only sees the log HH intensity; the scattering labels come
from the full polarimetric vectors. A random per-patch gain (incidence-angle
style calibration drift) removes absolute brightness as a shortcut, and the
mixture weights drift per patch around the class mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from .imgphy import TEST_SPLIT, UNLABELED, ImgPhyDataset
from .synth import PRESETS, ClassSpec, CoherencySpec, SceneLayout, generate_polsar_scene

MECHANISMS = ("surface", "double-bounce", "volume", "rough-surface", "vegetation")


@dataclass
class PatchClass:
    name: str
    mixture: list                 # [(mechanism name, weight), ...]
    blob_scale: float = 0.0
    texture_looks: float | None = None
    gains: dict = field(default_factory=dict)   # mechanism name -> power multiplier


def default_classes() -> list:
    """Four scattering families; most share their mixture with a sibling class that
    differs only in spatial structure or texture, as ice types often do."""
    water = {"surface": 0.3, "rough-surface": 0.6}
    new_ice = {"surface": 1.0, "volume": 0.6}
    deformed = {"volume": 1.0, "double-bounce": 3.0}
    return [
        PatchClass("calm-water", [("surface", 0.8), ("rough-surface", 0.2)], 1.0, None, water),
        PatchClass("wind-roughened", [("surface", 0.8), ("rough-surface", 0.2)], 4.0, 3.0, water),
        PatchClass("nilas", [("surface", 0.6), ("volume", 0.4)], 2.0, None, new_ice),
        PatchClass("young-ice", [("surface", 0.6), ("volume", 0.4)], 5.0, 4.0, new_ice),
        PatchClass("first-year-ice", [("volume", 0.5), ("rough-surface", 0.5)], 2.5, 6.0),
        PatchClass("ridged-ice", [("volume", 0.7), ("double-bounce", 0.3)], 1.5, None, deformed),
        PatchClass("deformed-ice", [("volume", 0.7), ("double-bounce", 0.3)], 4.0, 3.0, deformed),
    ]


@dataclass
class BenchmarkSpec:
    classes: list = field(default_factory=default_classes)
    n_patches: int = 600
    patch_size: int = 64
    test_per_class: int = 40
    train_sizes: tuple = (5, 15, 25)
    gain_jitter_db: float = 2.0
    mixture_concentration: float | None = None
    look_window: int = 3
    seed: int = 0

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def _mechanisms(classes) -> tuple:
    """One coherency matrix per (mechanism, gain) pair, shared by all classes."""
    keys, mats = [], []
    for c in classes:
        for m, _ in c.mixture:
            key = (m, float(c.gains.get(m, 1.0)))
            if key not in keys:
                keys.append(key)
                mats.append(CoherencySpec(PRESETS[m].matrix * key[1], f"{m}x{key[1]:g}"))
    return keys, mats


def hh_intensity(k: np.ndarray) -> np.ndarray:
    """|S_HH|^2 from Pauli vectors ``(..., 3)``."""
    hh = (k[..., 0] + k[..., 1]) / np.sqrt(2.0)
    return np.abs(hh) ** 2


def _box(a, win):
    if win <= 1:
        return a
    return uniform_filter(a, size=(1,) * (a.ndim - 2) + (win, win), mode="nearest")


def class_counts(spec: BenchmarkSpec) -> np.ndarray:
    base, extra = divmod(spec.n_patches, spec.n_classes)
    return np.array([base + (1 if i < extra else 0) for i in range(spec.n_classes)])


def generate_patches(spec: BenchmarkSpec):
    """Scattering vectors ``(N, s, s, 3)`` (complex64), class labels and mechanism maps."""
    keys, mats = _mechanisms(spec.classes)
    counts = class_counts(spec)
    if np.any(counts < spec.test_per_class + max(spec.train_sizes)):
        raise ValueError("too few patches per class for the requested splits")
    labels = np.repeat(np.arange(spec.n_classes), counts)
    streams = np.random.SeedSequence(spec.seed).spawn(len(labels) + 1)
    order = np.random.default_rng(streams[-1]).permutation(len(labels))
    labels = labels[order]
    s = spec.patch_size
    vecs = np.empty((len(labels), s, s, 3), dtype=np.complex64)
    mech = np.empty((len(labels), s, s), dtype=np.uint8)
    for n, (cid, ss) in enumerate(zip(labels, streams[:-1])):
        c = spec.classes[cid]
        rng = np.random.default_rng(ss)
        gain = 10.0 ** (rng.uniform(-1.0, 1.0) * spec.gain_jitter_db / 10.0)
        weights = np.array([w for _, w in c.mixture], dtype=float)
        if spec.mixture_concentration is not None and weights.size > 1:
            # per-patch mixture drift around the class mean
            weights = rng.dirichlet(spec.mixture_concentration * weights / weights.sum())
        mix = [(keys.index((m, float(c.gains.get(m, 1.0)))), float(w))
               for (m, _), w in zip(c.mixture, weights)]
        layout = SceneLayout(s, s, [((0, 0, s, s), 0)],
                             {0: ClassSpec(mix, gain, c.blob_scale, c.texture_looks)}, mats)
        scene = generate_polsar_scene(layout, int(rng.integers(2**63 - 1)))
        vecs[n] = scene.vectors()
        mech[n] = scene.mechanism
    return vecs, labels, mech


def amplitude_images(vecs: np.ndarray, look_window: int = 3) -> np.ndarray:
    """Standardized log HH intensity after light boxcar multilooking, float32."""
    inten = _box(hh_intensity(vecs.astype(np.complex128)), look_window)
    img = np.log(inten + 1e-6)
    return ((img - img.mean()) / img.std()).astype(np.float32)


def make_splits(labels: np.ndarray, spec: BenchmarkSpec, ids: list) -> tuple:
    """Fixed test split, nested ``train-k`` subsets and an unlabeled remainder."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    kmax = max(spec.train_sizes)
    test, train_rank, unlabeled = [], {}, []
    for c in range(spec.n_classes):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(members.size)]
        test.extend(members[:spec.test_per_class].tolist())
        for r, i in enumerate(members[spec.test_per_class:spec.test_per_class + kmax]):
            train_rank[int(i)] = r
        unlabeled.extend(members[spec.test_per_class + kmax:].tolist())
    splits = {TEST_SPLIT: sorted(ids[i] for i in test),
              "labeled": sorted(ids[i] for i in train_rank),
              "unlabeled": sorted(ids[i] for i in unlabeled)}
    for k in spec.train_sizes:
        splits[f"train-{k}"] = sorted(ids[i] for i, r in train_rank.items() if r < k)
    return splits, set(unlabeled)


def build_benchmark(spec: BenchmarkSpec | None = None) -> ImgPhyDataset:
    """In-memory dataset with amplitude images and complex vectors; Phy rasters are left to the XM stage."""
    spec = spec or BenchmarkSpec()
    vecs, labels, mech = generate_patches(spec)
    ids = [f"p{n:04d}" for n in range(len(labels))]
    imgs = amplitude_images(vecs, spec.look_window)
    splits, unlabeled = make_splits(labels, spec, ids)
    stored = np.where(np.isin(np.arange(len(labels)), list(unlabeled)), UNLABELED, labels)
    ds = ImgPhyDataset(ids, stored, {i: imgs[n] for n, i in enumerate(ids)},
                       [c.name for c in spec.classes], splits,
                       slc={i: vecs[n] for n, i in enumerate(ids)},
                       extra={"benchmark_seed": spec.seed, "gain_jitter_db": spec.gain_jitter_db,
                              "mixture_concentration": spec.mixture_concentration,
                              "look_window": spec.look_window,
                              "mechanism_fraction": _mechanism_fraction(mech, labels, spec)})
    return ds


def _mechanism_fraction(mech, labels, spec) -> list:
    keys, _ = _mechanisms(spec.classes)
    out = []
    for c in range(spec.n_classes):
        m = mech[labels == c]
        out.append([float(np.mean(m == j)) for j in range(len(keys))])
    return out
