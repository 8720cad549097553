"""Classifier head, loss, optimizer, sampling and the training loop."""

from .head import ClassifierHead, bce_loss, sigmoid
from .optim import AdamState, adam_step
from .sampling import ALL_AUGMENTATIONS, Augmentation, augment, balanced_batches
from .training import Featurizer, Fusion, FusionConfig, TrainConfig, TrainResult, score_entries, train

__all__ = [
    "ALL_AUGMENTATIONS", "AdamState", "Augmentation", "ClassifierHead", "Featurizer", "Fusion",
    "FusionConfig", "TrainConfig", "TrainResult", "adam_step", "augment", "balanced_batches",
    "bce_loss", "score_entries", "sigmoid", "train",
]
