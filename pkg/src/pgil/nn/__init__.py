"""Reverse-mode differentiable core: tensors, layers, guidance and injection networks."""

from .checkpoint import load_model, model_bytes, save_model
from .losses import cross_entropy, pgn_loss, pin_loss, sample_activation_mask
from .models import PROFILES, SITES, ArchProfile, PgnModel, PinModel, Transform, broadcast_bot, get_profile
from .tensor import ShapeError, Tensor
from .train import (SGD, TrainConfig, TrainingError, learning_rate, pgn_features, predict_scores,
                    train_classifier_from_pgn, train_pgn, train_pin)

__all__ = [
    "Tensor", "ShapeError", "ArchProfile", "PROFILES", "SITES", "get_profile", "PgnModel", "PinModel",
    "Transform", "broadcast_bot", "pgn_loss", "pin_loss", "cross_entropy", "sample_activation_mask",
    "TrainConfig", "TrainingError", "SGD", "learning_rate", "train_pgn", "train_pin", "predict_scores",
    "pgn_features", "train_classifier_from_pgn", "save_model", "load_model", "model_bytes",
]
