"""Residual backbones, the physics-guided network and the physics-injected classifier."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .layers import BatchNorm2d, Conv2d, Linear, Module, Stage
from .tensor import ShapeError, Tensor

SITES = ("inj-2", "inj-3", "inj-4")
PGN_STAGES = 3


@dataclass(frozen=True)
class ArchProfile:
    """Residual network geometry. Stage ``k`` has stride 1 for ``k = 1`` and 2 otherwise."""

    name: str = "desk"
    in_channels: int = 1
    input_size: int = 64
    stem_kernel: int = 3
    stem_stride: int = 1
    stem_pool: int = 2
    widths: tuple = (16, 32, 64, 128)
    blocks: tuple = (2, 2, 2, 2)

    def stride_after(self, n_stages: int) -> int:
        return self.stem_stride * self.stem_pool * 2 ** (n_stages - 1)

    def spatial_after(self, n_stages: int) -> int:
        return self.input_size // self.stride_after(n_stages)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"], d["blocks"] = list(self.widths), list(self.blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchProfile":
        d = dict(d)
        d["widths"], d["blocks"] = tuple(d["widths"]), tuple(d["blocks"])
        return cls(**d)


PROFILES = {
    "desk": ArchProfile(),
    "full": ArchProfile("full", 1, 256, 7, 2, 2, (64, 128, 256, 512), (2, 2, 2, 2)),
}


def get_profile(name_or_profile) -> ArchProfile:
    if isinstance(name_or_profile, ArchProfile):
        return name_or_profile
    try:
        return PROFILES[name_or_profile]
    except KeyError:
        raise ValueError(f"unknown architecture profile {name_or_profile!r}; choose from {sorted(PROFILES)}") from None


class Backbone(Module):
    """Stem (conv, BN, ReLU, max-pool) followed by the first ``n_stages`` residual stages."""

    def __init__(self, profile: ArchProfile, n_stages: int, rng):
        p = profile
        self.profile = p
        self.n_stages = n_stages
        self.stem = Conv2d(p.in_channels, p.widths[0], p.stem_kernel, rng, stride=p.stem_stride)
        self.stem_bn = BatchNorm2d(p.widths[0])
        self.stages = []
        c_in = p.widths[0]
        for k in range(n_stages):
            self.stages.append(Stage(c_in, p.widths[k], p.blocks[k], 1 if k == 0 else 2, rng))
            c_in = p.widths[k]

    def check_input(self, x: Tensor):
        p = self.profile
        total = p.stride_after(self.n_stages)
        if x.ndim != 4 or x.shape[1] != p.in_channels or x.shape[2] % total or x.shape[3] % total:
            raise ShapeError("backbone", x.shape,
                             detail=f"need (N,{p.in_channels},H,W) with H, W divisible by {total}")

    def stem_forward(self, x: Tensor) -> Tensor:
        self.check_input(x)
        h = T.relu(self.stem_bn(self.stem(x)))
        return T.max_pool2d(h, self.profile.stem_pool) if self.profile.stem_pool > 1 else h

    def __call__(self, x: Tensor) -> Tensor:
        h = self.stem_forward(x)
        for s in self.stages:
            h = s(h)
        return h


class PgnModel(Module):
    """Backbone of three residual stages plus the physics mapping layer (PML)."""

    def __init__(self, profile="desk", n_topics: int = 175, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.profile = get_profile(profile)
        self.n_topics = n_topics
        self.seed = seed
        c = self.profile.widths[PGN_STAGES - 1]
        self.backbone = Backbone(self.profile, PGN_STAGES, rng)
        self.pml_conv = Conv2d(c, c, 3, rng)
        self.pml_bn = BatchNorm2d(c)
        self.pml_fc = Linear(c, n_topics, rng)

    @property
    def feature_channels(self) -> int:
        return self.profile.widths[PGN_STAGES - 1]

    def forward_backbone(self, x: Tensor) -> Tensor:
        """Physics-aware feature map F_PA (output of the third residual stage)."""
        return self.backbone(T.as_tensor(x))

    def forward_pml(self, f: Tensor) -> Tensor:
        """Raw topic scores ``(N, K)``; softmax is applied inside the loss."""
        if f.ndim != 4 or f.shape[1] != self.feature_channels:
            raise ShapeError("forward_pml", f.shape, detail=f"expected {self.feature_channels} channels")
        h = T.relu(self.pml_bn(self.pml_conv(f)))
        return self.pml_fc(T.global_avg_pool(h))

    def __call__(self, x):
        return self.forward_pml(self.forward_backbone(x))

    def config(self) -> dict:
        return {"model": "pgn", "profile": self.profile.to_dict(), "n_topics": self.n_topics, "seed": self.seed}


class Transform(Module):
    """1x1 convolution to the site width, then spatial resampling by ``factor``.

    ``factor > 1`` is nearest upsampling, ``factor < 1`` average pooling by
    ``1 / factor`` and ``1`` the identity.
    """

    def __init__(self, c_in, c_out, factor, rng, init="uniform"):
        self.conv = Conv2d(c_in, c_out, 1, rng, padding=0, bias=True, gain=1.0)
        self.factor = factor
        if init == "zero":
            self.conv.weight.data[...] = 0.0
        elif init == "identity":
            if c_in != c_out:
                raise ShapeError("transform", (c_in,), (c_out,), detail="identity init needs equal channels")
            self.conv.weight.data[...] = np.eye(c_in)[:, :, None, None]
        elif init != "uniform":
            raise ValueError(f"unknown transform init {init!r}")

    def __call__(self, f: Tensor) -> Tensor:
        h = self.conv(f)
        if self.factor > 1:
            return T.upsample_nearest(h, int(self.factor))
        if self.factor < 1:
            return T.avg_pool2d(h, int(round(1 / self.factor)))
        return h


def site_stage(site: str) -> int:
    """Residual stage (1-based) whose output receives the injection."""
    if site not in SITES:
        raise ValueError(f"unknown injection site {site!r}; choose from {SITES}")
    return int(site[-1])


class PinModel(Module):
    """Four-stage residual classifier with additive injection after selected stages.

    ``source_channels``/``source_size`` describe the injected tensor: F_PA from
    a PGN, or a spatially broadcast topic vector for direct injection.
    """

    def __init__(self, profile="desk", n_classes: int = 7, sites=SITES, source_channels: int | None = None,
                 source_size: int | None = None, seed: int = 0, transform_init: str = "uniform"):
        rng = np.random.default_rng(seed)
        self.profile = p = get_profile(profile)
        self.n_classes = n_classes
        self.sites = tuple(sorted(set(sites)))
        for s in self.sites:
            site_stage(s)
        self.seed = seed
        self.source_channels = p.widths[PGN_STAGES - 1] if source_channels is None else source_channels
        self.source_size = p.spatial_after(PGN_STAGES) if source_size is None else source_size
        self.backbone = Backbone(p, 4, rng)
        self.head = Linear(p.widths[3], n_classes, rng)
        self.transforms = {}
        for s in self.sites:
            k = site_stage(s)
            factor = p.spatial_after(k) / self.source_size
            self.transforms[s] = Transform(self.source_channels, p.widths[k - 1], factor, rng, transform_init)
        self.transform_init = transform_init

    def features(self, x: Tensor, source: Tensor | None = None, upto: int = 4) -> Tensor:
        x = T.as_tensor(x)
        if self.sites and source is None:
            raise ValueError("injection sites configured but no source tensor given")
        h = self.backbone.stem_forward(x)
        for k, stage in enumerate(self.backbone.stages[:upto], start=1):
            h = stage(h)
            site = f"inj-{k}"
            if site in self.transforms:
                inj = self.transforms[site](T.as_tensor(source))
                if inj.shape != h.shape:
                    raise ShapeError("inject", h.shape, inj.shape, detail=site)
                h = T.add(h, inj)
        return h

    def __call__(self, x: Tensor, source: Tensor | None = None) -> Tensor:
        return self.head(T.global_avg_pool(self.features(x, source)))

    def config(self) -> dict:
        return {"model": "pin", "profile": self.profile.to_dict(), "n_classes": self.n_classes,
                "sites": list(self.sites), "source_channels": self.source_channels,
                "source_size": self.source_size, "seed": self.seed, "transform_init": self.transform_init}


def broadcast_bot(bots: np.ndarray, size: int) -> Tensor:
    """Tile ``(N, K)`` topic vectors into a constant ``(N, K, size, size)`` map."""
    b = np.asarray(bots, dtype=np.float64)
    return Tensor(np.broadcast_to(b[:, :, None, None], b.shape + (size, size)).copy())
