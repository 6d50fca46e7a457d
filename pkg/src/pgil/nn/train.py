"""SGD training loops for the guidance network and the injected classifier."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .losses import CONSTRAINTS, cross_entropy, pgn_loss, pin_loss, sample_activation_mask
from .models import PGN_STAGES, PgnModel, PinModel, broadcast_bot
from .tensor import Tensor

SCHEDULES = ("constant", "cosine")
SOURCES = ("pgn", "bot", "none")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 20
    batch_size: int = 32
    schedule: str = "constant"
    final_lr: float = 1e-8
    final_epochs: int = 3
    weight_decay: float = 0.0
    lam: float = 0.1
    seed: int = 0
    constraint: str = "soft"
    sal: bool = False
    finetune_scale: float = 0.1
    alpha: float = 0.1
    p_a: float = 0.9

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"constraint must be one of {CONSTRAINTS}")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not (0 <= self.alpha <= 1 and 0 <= self.p_a <= 1):
            raise ValueError("alpha and p_a must lie in [0, 1]")
        if self.finetune_scale < 0 or self.weight_decay < 0:
            raise ValueError("finetune_scale and weight_decay must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Per-epoch rate. Cosine decays to ``final_lr`` and holds it for the last ``final_epochs``."""
    if cfg.schedule == "constant":
        return cfg.lr
    span = max(cfg.epochs - cfg.final_epochs, 1)
    if epoch >= span:
        return cfg.final_lr
    return cfg.final_lr + 0.5 * (cfg.lr - cfg.final_lr) * (1.0 + math.cos(math.pi * epoch / span))


class SGD:
    """Momentum SGD over parameter groups ``[(params, lr_scale), ...]``."""

    def __init__(self, groups, momentum=0.9, weight_decay=0.0):
        self.groups = [(list(ps), s) for ps, s in groups]
        self.momentum, self.weight_decay = momentum, weight_decay
        self.velocity = {id(p): np.zeros_like(p.data) for ps, _ in self.groups for p in ps}

    def step(self, lr):
        for params, scale in self.groups:
            for p in params:
                if p.grad is None:
                    continue
                g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
                v = self.velocity[id(p)]
                v *= self.momentum
                v += g
                p.data = p.data - (lr * scale) * v

    def zero_grad(self):
        for params, _ in self.groups:
            for p in params:
                p.grad = None


def batches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled indices split into ``ceil(n / batch_size)`` near-equal batches."""
    order = rng.permutation(n)
    return np.array_split(order, max(1, math.ceil(n / batch_size)))


def _log(log, path, record):
    log.append(record)
    if path is not None:
        with open(path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _check_finite(loss: Tensor, where: str, epoch: int, step: int, idx):
    if not np.isfinite(loss.data):
        raise TrainingError(f"non-finite loss in {where} at epoch {epoch}, step {step}; "
                            f"batch indices {idx[:8].tolist()}...")


def train_pgn(model: PgnModel, images: np.ndarray, bots: np.ndarray, cfg: TrainConfig, log_path=None):
    """Optimize the masked guidance loss over all image/topic pairs.

    Returns per-epoch records ``{"epoch", "loss", "lr"}`` (also appended to
    ``log_path`` as JSON lines).
    """
    images = np.asarray(images, dtype=np.float64)
    bots = np.asarray(bots, dtype=np.float64)
    if len(images) == 0:
        raise ValueError("empty training set")
    if len(images) != len(bots) or bots.shape[1] != model.n_topics:
        raise ValueError(f"images {images.shape} and topic vectors {bots.shape} disagree")
    rng = np.random.default_rng(cfg.seed)
    opt = SGD([(model.parameters().values(), 1.0)], cfg.momentum, cfg.weight_decay)
    model.train()
    log = []
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        total, count = 0.0, 0
        for step, idx in enumerate(batches(len(images), cfg.batch_size, rng)):
            delta = sample_activation_mask(bots[idx], cfg.alpha, cfg.p_a, rng)
            phi = model(Tensor(images[idx]))
            loss = pgn_loss(bots[idx], phi, delta, cfg.constraint)
            _check_finite(loss, "train_pgn", epoch, step, idx)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            total += loss.item() * len(idx)
            count += len(idx)
        _log(log, log_path, {"epoch": epoch, "loss": total / count, "lr": lr})
    model.eval()
    return log


def _source(pin: PinModel, kind: str, pgn, x_idx_images, bots_idx):
    if kind == "none":
        return None
    if kind == "bot":
        # keep the source-to-input ratio of the profile for other patch sizes
        size = pin.source_size * x_idx_images.shape[-1] // pin.profile.input_size
        return broadcast_bot(bots_idx, max(size, 1))
    return pgn.forward_backbone(Tensor(x_idx_images))


def pgn_features(pgn: PgnModel, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """F_PA for every image, in eval mode."""
    pgn.eval()
    out = [pgn.forward_backbone(Tensor(images[i:i + batch_size])).data
           for i in range(0, len(images), batch_size)]
    return np.concatenate(out)


def train_pin(pin: PinModel, images: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
              pgn: PgnModel | None = None, bots: np.ndarray | None = None, source: str = "pgn",
              log_path=None):
    """Train the classifier and its transforms with cross-entropy.

    With ``cfg.sal`` the PGN is fine-tuned at ``finetune_scale * lr`` under the
    combined loss (guidance term weighted by ``cfg.lam``); its batchnorm layers
    stay in eval mode. Without SAL the PGN is never touched.
    """
    if source not in SOURCES:
        raise ValueError(f"source must be one of {SOURCES}")
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("empty labeled set")
    if source == "pgn" and pgn is None:
        raise ValueError("source 'pgn' needs a trained PgnModel")
    if (source == "bot" or (source == "pgn" and cfg.sal)) and bots is None:
        raise ValueError("topic vectors required for this configuration")
    if source == "none" and pin.sites:
        raise ValueError("classifier has injection sites but source is 'none'")
    sal = cfg.sal and source == "pgn"
    rng = np.random.default_rng(cfg.seed)
    groups = [(pin.parameters().values(), 1.0)]
    if sal:
        groups.append((pgn.parameters().values(), cfg.finetune_scale))
        pgn.eval()
    cached = pgn_features(pgn, images) if source == "pgn" and not sal else None
    opt = SGD(groups, cfg.momentum, cfg.weight_decay)
    pin.train()
    log = []
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        total, count = 0.0, 0
        for step, idx in enumerate(batches(len(images), cfg.batch_size, rng)):
            x = Tensor(images[idx])
            phi = delta = None
            if cached is not None:
                src = Tensor(cached[idx])
            elif source == "pgn":
                src = pgn.forward_backbone(x)
                phi = pgn.forward_pml(src)
                delta = sample_activation_mask(bots[idx], cfg.alpha, cfg.p_a, rng)
            else:
                src = _source(pin, source, pgn, images[idx], None if bots is None else bots[idx])
            scores = pin(x, src)
            loss = pin_loss(scores, labels[idx], phi, None if bots is None else bots[idx], delta,
                            cfg.lam if sal else 0.0, cfg.constraint)
            _check_finite(loss, "train_pin", epoch, step, idx)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            total += loss.item() * len(idx)
            count += len(idx)
        _log(log, log_path, {"epoch": epoch, "loss": total / count, "lr": lr})
    pin.eval()
    return log


def predict_scores(pin: PinModel, images: np.ndarray, pgn: PgnModel | None = None,
                   bots: np.ndarray | None = None, source: str = "pgn", batch_size: int = 64) -> np.ndarray:
    """Class scores in eval mode."""
    pin.eval()
    if pgn is not None:
        pgn.eval()
    out = []
    for i in range(0, len(images), batch_size):
        xb = np.asarray(images[i:i + batch_size], dtype=np.float64)
        src = _source(pin, source, pgn, xb, None if bots is None else bots[i:i + batch_size])
        out.append(pin(Tensor(xb), src).data)
    return np.concatenate(out)


def train_classifier_from_pgn(pgn: PgnModel, n_classes: int, images, labels, cfg: TrainConfig):
    """Fine-tune a plain classifier whose first three stages start from the PGN backbone."""
    pin = PinModel(pgn.profile, n_classes, sites=(), seed=cfg.seed)
    src = pgn.backbone.state_dict()
    dst = pin.backbone.state_dict()
    for k, v in src.items():
        dst[k] = v.copy()
    pin.backbone.load_state_dict(dst)
    train_pin(pin, images, labels, cfg, source="none")
    return pin


__all__ = ["TrainConfig", "TrainingError", "SGD", "learning_rate", "batches", "train_pgn", "train_pin",
           "predict_scores", "pgn_features", "train_classifier_from_pgn", "cross_entropy", "PGN_STAGES"]
