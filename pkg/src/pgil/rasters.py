"""Raster containers shared by the simulator, the explainable models and the dataset."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INVALID_LABEL = 255


@dataclass
class ComplexImage:
    """Single-channel complex raster, row-major ``(height, width)``."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 2:
            raise ValueError(f"ComplexImage needs a 2-D array, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("ComplexImage samples must be finite")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class ScatteringLabelMap:
    """Per-pixel discrete scattering labels in ``[0, n_classes)``.

    ``INVALID_LABEL`` marks pixels without a valid label. ``meta`` carries
    diagnostics of the model that produced the map (iteration traces, flags).
    """

    labels: np.ndarray
    n_classes: int
    provenance: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim < 2:
            raise ValueError("label map must be at least 2-D")
        valid = self.labels[self.labels != INVALID_LABEL]
        if valid.size and (valid.min() < 0 or valid.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    @property
    def height(self) -> int:
        return self.labels.shape[-2]

    @property
    def width(self) -> int:
        return self.labels.shape[-1]
