"""Model checkpoints stored as blobs: architecture config in the header, state as arrays."""

from __future__ import annotations

from .. import blobs
from .models import ArchProfile, PgnModel, PinModel

KIND = "model"


def save_model(path, model, **meta) -> str:
    """Write ``model`` and return the sha256 of the file."""
    header = {"config": model.config(), **meta}
    return blobs.save(path, model.state_dict(), header, KIND)


def model_bytes(model, **meta) -> bytes:
    return blobs.dumps(model.state_dict(), {"config": model.config(), **meta}, KIND)


def load_model(path):
    """Rebuild a ``PgnModel`` or ``PinModel`` from a checkpoint. Returns ``(model, meta)``."""
    arrays, meta = blobs.load(path, KIND)
    cfg = dict(meta["config"])
    profile = ArchProfile.from_dict(cfg["profile"])
    if cfg["model"] == "pgn":
        model = PgnModel(profile, cfg["n_topics"], cfg["seed"])
    elif cfg["model"] == "pin":
        model = PinModel(profile, cfg["n_classes"], cfg["sites"], cfg["source_channels"],
                         cfg["source_size"], cfg["seed"], cfg["transform_init"])
    else:
        raise blobs.BlobError(f"unknown model type {cfg['model']!r}")
    model.load_state_dict(arrays)
    model.eval()
    return model, meta
