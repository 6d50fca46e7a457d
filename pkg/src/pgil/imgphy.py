"""Img-Phy dataset: amplitude patches paired with scattering-label rasters.

On-disk layout under ``root``::

    manifest.json      version, dims, N_s, class names, provenance, per-patch records
    splits.json        split name -> sorted patch ids
    img/<id>.f32       amplitude image, row-major little-endian float32
    phy/<id>.u8        scattering labels, uint8 (255 = invalid)
    slc/<id>.f32       optional complex channels, (h, w, c) interleaved re/im float32

Semantic labels of the test split are only handed out by :meth:`ImgPhyDataset.labels`
when explicitly requested.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
TEST_SPLIT = "test"
UNLABELED = -1


class ImgPhyError(ValueError):
    def __init__(self, message: str, patch_id: str | None = None):
        super().__init__(message if patch_id is None else f"patch {patch_id}: {message}")
        self.patch_id = patch_id


@dataclass
class ImgPhyDataset:
    ids: list
    labels_all: np.ndarray                 # semantic label per patch, -1 = unlabeled
    images: dict                           # id -> float32 (H, W)
    class_names: list
    splits: dict                           # name -> list of ids
    phy: dict = field(default_factory=dict)    # id -> uint8 (h, w)
    slc: dict = field(default_factory=dict)    # id -> complex64 (h, w, c)
    n_s: int = 0
    phy_provenance: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels_all = np.asarray(self.labels_all, dtype=np.int64)
        self.validate()

    # ---------------------------------------------------------------- checks
    def validate(self):
        if len(set(self.ids)) != len(self.ids):
            raise ImgPhyError("duplicate patch ids")
        if len(self.labels_all) != len(self.ids):
            raise ImgPhyError("one label entry per patch required")
        if np.any(self.labels_all >= len(self.class_names)) or np.any(self.labels_all < UNLABELED):
            raise ImgPhyError("label outside the class range")
        known = set(self.ids)
        seen: dict = {}
        for name, members in self.splits.items():
            for pid in members:
                if pid not in known:
                    raise ImgPhyError(f"split {name!r} refers to an unknown patch", pid)
        base = [n for n in self.splits if not n.startswith("train-")]
        for n in base:
            for pid in self.splits[n]:
                if pid in seen:
                    raise ImgPhyError(f"splits {seen[pid]!r} and {n!r} overlap", pid)
                seen[pid] = n
        test = set(self.splits.get(TEST_SPLIT, []))
        for n in self.splits:
            if n.startswith("train-") and test & set(self.splits[n]):
                raise ImgPhyError(f"split {n!r} overlaps the test split")
        shapes = {self.images[i].shape for i in self.ids}
        if len(shapes) != 1:
            raise ImgPhyError(f"image dims differ across patches: {sorted(shapes)}")
        if self.phy:
            pshapes = {self.phy[i].shape for i in self.ids if i in self.phy}
            if len(pshapes) > 1:
                raise ImgPhyError(f"phy dims differ across patches: {sorted(pshapes)}")

    # ---------------------------------------------------------------- access
    @property
    def img_dims(self):
        return tuple(self.images[self.ids[0]].shape)

    @property
    def phy_dims(self):
        return tuple(self.phy[self.ids[0]].shape) if self.phy else None

    def index_of(self, ids) -> np.ndarray:
        pos = {pid: i for i, pid in enumerate(self.ids)}
        return np.array([pos[i] for i in ids], dtype=np.int64)

    def split_ids(self, name: str) -> list:
        if name not in self.splits:
            raise KeyError(f"unknown split {name!r}; available: {sorted(self.splits)}")
        return list(self.splits[name])

    def corpus_ids(self, include_test: bool = False) -> list:
        """Every patch usable for unsupervised stages; test patches only if requested."""
        test = set(self.splits.get(TEST_SPLIT, []))
        return [i for i in self.ids if include_test or i not in test]

    def labels(self, ids, allow_test: bool = False) -> np.ndarray:
        test = set(self.splits.get(TEST_SPLIT, []))
        if not allow_test and any(i in test for i in ids):
            raise PermissionError("test-split labels are withheld; pass allow_test=True for final scoring")
        lab = self.labels_all[self.index_of(ids)]
        if np.any(lab == UNLABELED):
            raise ImgPhyError("requested labels of unlabeled patches")
        return lab

    def image_stack(self, ids) -> np.ndarray:
        """``(N, 1, H, W)`` float64 batch."""
        return np.stack([self.images[i] for i in ids]).astype(np.float64)[:, None]

    def phy_stack(self, ids) -> np.ndarray:
        return np.stack([self.phy[i] for i in ids])

    # ---------------------------------------------------------------- io
    def manifest(self) -> dict:
        recs = []
        split_of = {}
        for n, members in sorted(self.splits.items()):
            if not n.startswith("train-"):
                for pid in members:
                    split_of[pid] = n
        for pid, lab in zip(self.ids, self.labels_all.tolist()):
            recs.append({"id": pid, "label": None if lab == UNLABELED else int(lab),
                         "split": split_of.get(pid, "")})
        return {
            "version": FORMAT_VERSION,
            "n_patches": len(self.ids),
            "img_dims": list(self.img_dims),
            "phy_dims": list(self.phy_dims) if self.phy_dims else None,
            "slc_dims": list(self.slc[self.ids[0]].shape) if self.slc else None,
            "n_s": self.n_s,
            "class_names": list(self.class_names),
            "phy_provenance": self.phy_provenance,
            "extra": self.extra,
            "records": recs,
        }


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode()


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _complex_bytes(a) -> bytes:
    a = np.ascontiguousarray(a, dtype=np.complex64)
    return np.stack([a.real, a.imag], axis=-1).astype("<f4").tobytes()


def dataset_files(ds: ImgPhyDataset) -> dict:
    """Relative path -> bytes for every file of the dataset."""
    if not ds.phy or any(i not in ds.phy for i in ds.ids):
        raise ImgPhyError("every patch needs a phy raster before writing")
    files = {"manifest.json": _dump_json(ds.manifest()),
             "splits.json": _dump_json({k: sorted(v) for k, v in ds.splits.items()})}
    for pid in ds.ids:
        files[f"img/{pid}.f32"] = _f32(ds.images[pid])
        files[f"phy/{pid}.u8"] = np.ascontiguousarray(ds.phy[pid], dtype=np.uint8).tobytes()
        if ds.slc:
            files[f"slc/{pid}.f32"] = _complex_bytes(ds.slc[pid])
    return files


def content_hash(files: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(files):
        h.update(name.encode() + b"\0")
        h.update(hashlib.sha256(files[name]).digest())
    return h.hexdigest()


def dataset_hash(ds: ImgPhyDataset) -> str:
    return content_hash(dataset_files(ds))


def write_imgphy(ds: ImgPhyDataset, root) -> str:
    """Write the dataset under ``root`` and return its content hash."""
    ds.validate()
    files = dataset_files(ds)
    root = Path(root)
    for sub in ("img", "phy") + (("slc",) if ds.slc else ()):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for name, data in files.items():
        (root / name).write_bytes(data)
    return content_hash(files)


def _read(root: Path, rel: str, nbytes: int, pid: str) -> bytes:
    path = root / rel
    if not path.exists():
        raise ImgPhyError(f"missing file {rel}", pid)
    data = path.read_bytes()
    if len(data) != nbytes:
        raise ImgPhyError(f"{rel} has {len(data)} bytes, expected {nbytes}", pid)
    return data


def read_imgphy(root) -> ImgPhyDataset:
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise ImgPhyError(f"no manifest.json under {root}")
    man = json.loads(mpath.read_text())
    if man.get("version") != FORMAT_VERSION:
        raise ImgPhyError(f"unsupported dataset version {man.get('version')!r}")
    spath = root / "splits.json"
    if not spath.exists():
        raise ImgPhyError("missing splits.json")
    splits = json.loads(spath.read_text())
    ih, iw = man["img_dims"]
    ph, pw = man["phy_dims"]
    slc_dims = man.get("slc_dims")
    ids, labels, images, phy, slc = [], [], {}, {}, {}
    for rec in man["records"]:
        pid = rec["id"]
        ids.append(pid)
        labels.append(UNLABELED if rec["label"] is None else rec["label"])
        raw = _read(root, f"img/{pid}.f32", ih * iw * 4, pid)
        images[pid] = np.frombuffer(raw, dtype="<f4").reshape(ih, iw).astype(np.float32)
        raw = _read(root, f"phy/{pid}.u8", ph * pw, pid)
        phy[pid] = np.frombuffer(raw, dtype=np.uint8).reshape(ph, pw).copy()
        if slc_dims:
            n = int(np.prod(slc_dims)) * 8
            raw = np.frombuffer(_read(root, f"slc/{pid}.f32", n, pid), dtype="<f4")
            pair = raw.reshape(*slc_dims, 2)
            slc[pid] = (pair[..., 0] + 1j * pair[..., 1]).astype(np.complex64)
    if len(ids) != man["n_patches"]:
        raise ImgPhyError(f"manifest lists {len(ids)} records but n_patches={man['n_patches']}")
    return ImgPhyDataset(ids, np.array(labels), images, man["class_names"], splits, phy, slc,
                         man["n_s"], man["phy_provenance"], man.get("extra", {}))
