"""Run configuration with schema validation and JSON round trip."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .nn.models import PROFILES, SITES

MODES = ("baseline-cnn", "pgn-probe", "pgil-full", "raw-label-guidance", "direct-bot-injection",
         "pgn-finetune-only", "no-sal")
INJECTING_MODES = ("pgil-full", "raw-label-guidance", "direct-bot-injection", "no-sal")
XM_KINDS = ("auto", "halpha-wishart", "tfa")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "pgil-full"
    seed: int = 0
    data_seed: int = 0
    profile: str = "desk"
    train_split: str = "train-5"
    transductive_corpus: bool = False
    # explainable models
    xm: str = "auto"
    wishart_window: int = 7
    wishart_iter: int = 10
    tfa_segment: int = 16
    tfa_stride: int = 2
    tfa_bands: int = 3
    tfa_bandwidth: float = 0.3
    tfa_classes: int = 15
    # topic encoder
    n_words: int = 100
    n_topics: int = 100
    lda_alpha: float | None = None
    lda_beta: float = 0.01
    lda_iterations: int = 200
    infer_burn_in: int = 50
    infer_samples: int = 50
    crop: int = 8
    crop_step: int = 4
    vocab_samples: int = 20000
    # guidance loss
    alpha: float = 0.1
    p_a: float = 0.9
    lam: float = 0.1
    constraint: str = "soft"
    # guidance network
    pgn_lr: float = 0.05
    pgn_momentum: float = 0.9
    pgn_epochs: int = 40
    pgn_batch: int = 32
    # injected classifier
    pin_lr: float = 0.01
    pin_momentum: float = 0.9
    pin_epochs: int = 50
    pin_batch: int = 16
    pin_weight_decay: float = 5e-4
    pin_schedule: str = "cosine"
    sites: tuple = SITES
    sal: bool = True
    finetune_scale: float = 0.1
    # diagnostics
    probe_reg: float = 1e-3
    probe_epochs: int = 100
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sites = tuple(self.sites)

    def validate(self) -> "RunConfig":
        err = []
        if self.mode not in MODES:
            err.append(f"mode must be one of {MODES}")
        if self.profile not in PROFILES:
            err.append(f"profile must be one of {sorted(PROFILES)}")
        if self.xm not in XM_KINDS:
            err.append(f"xm must be one of {XM_KINDS}")
        if self.constraint not in ("soft", "hard"):
            err.append("constraint must be soft or hard")
        if self.pin_schedule not in ("constant", "cosine"):
            err.append("pin_schedule must be constant or cosine")
        bad = [s for s in self.sites if s not in SITES]
        if bad:
            err.append(f"unknown injection sites {bad}")
        if self.mode in INJECTING_MODES and not self.sites:
            err.append(f"mode {self.mode} injects features but no sites are configured")
        if not self.train_split.startswith("train-"):
            err.append("train_split must name a train-k split")
        for name in ("alpha", "p_a"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                err.append(f"{name} must lie in [0, 1]")
        if self.lam < 0:
            err.append("lam must be >= 0")
        for name in ("pgn_lr", "pin_lr", "lda_beta", "probe_reg"):
            if not getattr(self, name) > 0:
                err.append(f"{name} must be > 0")
        if self.lda_alpha is not None and not self.lda_alpha > 0:
            err.append("lda_alpha must be > 0")
        for name in ("n_words", "n_topics", "tfa_classes"):
            if getattr(self, name) < 2:
                err.append(f"{name} must be >= 2")
        for name in ("pgn_epochs", "pin_epochs", "pgn_batch", "pin_batch", "lda_iterations",
                     "infer_samples", "wishart_iter", "crop", "crop_step", "probe_epochs"):
            if getattr(self, name) < 1:
                err.append(f"{name} must be >= 1")
        if self.wishart_window < 1 or self.wishart_window % 2 == 0:
            err.append("wishart_window must be a positive odd integer")
        if err:
            raise ConfigError("; ".join(err))
        return self

    def effective_sal(self) -> bool:
        return self.mode == "pgil-full" and self.sal

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sites"] = list(self.sites)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def full_scale(cls, **kw) -> "RunConfig":
        """Full-scale hyperparameters: ResNet-18 widths, 500 words, 175 topics, long schedules."""
        base = dict(profile="full", n_words=500, n_topics=175, lda_iterations=500, pgn_lr=0.05,
                    pgn_epochs=200, pgn_batch=300, pin_lr=0.001, pin_epochs=50, pin_batch=100,
                    pin_weight_decay=0.0, transductive_corpus=True)
        base.update(kw)
        return cls(**base)
