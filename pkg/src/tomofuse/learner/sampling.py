"""Class-balanced mini-batches and the flip/rotation augmentation group."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import MissingClass, NonSquareRotation
from ..volcore import ManifestEntry


def _targets(items) -> np.ndarray:
    return np.array([it.label.target if isinstance(it, ManifestEntry) else int(it) for it in items], dtype=np.int64)


def _cycled(indices: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws made of back-to-back shuffled passes over ``indices``."""
    reps = math.ceil(n / len(indices))
    return np.concatenate([rng.permutation(indices) for _ in range(reps)])[:n]


def balanced_batches(items, batch_size: int, seed) -> list[np.ndarray]:
    """One epoch of index batches, each holding ``batch_size/2`` samples per class.

    ``items`` are manifest entries or 0/1 targets. The epoch has enough batches
    to show every majority-class sample once. The minority class is
    oversampled by repeating shuffled passes over it. Within a batch the
    negatives come first, then the positives.
    """
    if batch_size < 2 or batch_size % 2:
        raise ValueError(f"batch_size must be a positive even number, got {batch_size}")
    targets = _targets(items)
    neg = np.flatnonzero(targets == 0)
    pos = np.flatnonzero(targets == 1)
    if len(neg) == 0 or len(pos) == 0:
        raise MissingClass(f"balanced sampling needs both classes; got {len(neg)} negative, {len(pos)} positive")
    half = batch_size // 2
    n_batches = math.ceil(max(len(neg), len(pos)) / half)
    rng = np.random.default_rng(seed)
    neg_draws = _cycled(neg, n_batches * half, rng)
    pos_draws = _cycled(pos, n_batches * half, rng)
    return [
        np.concatenate([neg_draws[b * half : (b + 1) * half], pos_draws[b * half : (b + 1) * half]])
        for b in range(n_batches)
    ]


@dataclass(frozen=True)
class Augmentation:
    """Optional horizontal flip followed by a counter-clockwise rotation."""

    flip: bool = False
    rotation: int = 0

    def __post_init__(self):
        if self.rotation not in (0, 90, 180, 270):
            raise ValueError(f"rotation must be 0, 90, 180 or 270 degrees, got {self.rotation}")

    def inverse(self) -> "Augmentation":
        if self.flip:
            # (R . F)^-1 = F . R^-1 = R . F: flipped elements are involutions
            return self
        return Augmentation(False, (-self.rotation) % 360)


ALL_AUGMENTATIONS = tuple(Augmentation(f, r) for f in (False, True) for r in (0, 90, 180, 270))
IDENTITY = Augmentation()


def allowed_augmentations(height: int, width: int) -> tuple[Augmentation, ...]:
    if height == width:
        return ALL_AUGMENTATIONS
    return tuple(a for a in ALL_AUGMENTATIONS if a.rotation in (0, 180))


def augment(img: np.ndarray, a: Augmentation) -> np.ndarray:
    """Apply ``a`` to the last two axes of ``img`` (any leading axes are kept)."""
    img = np.asarray(img)
    if img.ndim < 2:
        raise ValueError("augment needs at least a 2D image")
    if a.rotation in (90, 270) and img.shape[-1] != img.shape[-2]:
        raise NonSquareRotation(f"cannot rotate a non-square {img.shape[-2]}x{img.shape[-1]} image by {a.rotation}")
    out = np.flip(img, axis=-1) if a.flip else img
    out = np.rot90(out, k=a.rotation // 90, axes=(-2, -1))
    return np.ascontiguousarray(out)
