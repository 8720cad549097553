"""Slice-sequence fusion applied before feature extraction.

* ``average_image``: per-pixel mean over depth (a pseudo 2D mammogram).
* ``dynamic_image``: approximate rank pooling, a fixed zero-sum weighting of
  the slices that keeps how the volume changes along depth.
* ``space_to_channel``: packs slices ``(i-j, i, i+j)`` into one 3-channel
  image per center slice.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidDepth
from .volcore import ConstantVolume, Volume, normalize


class RankVariant(enum.Enum):
    LINEAR = "linear"
    HARMONIC = "harmonic"


@dataclass(frozen=True)
class TripletImage:
    channels: np.ndarray  # 3 x H x W
    center_index: int  # 0-based


@lru_cache(maxsize=256)
def _coefficients(depth: int, variant: RankVariant) -> tuple[float, ...]:
    t = np.arange(1, depth + 1, dtype=np.float64)
    if variant is RankVariant.LINEAR:
        alpha = 2.0 * t - depth - 1.0
    else:
        # harmonic[k] = H_k = sum_{i<=k} 1/i, harmonic[0] = 0
        harmonic = np.concatenate([[0.0], np.cumsum(1.0 / t)])
        alpha = 2.0 * (depth - t + 1.0) - (depth + 1.0) * (harmonic[depth] - harmonic[:-1])
    return tuple(alpha.tolist())


def rank_pool_coefficients(depth: int, variant: RankVariant = RankVariant.HARMONIC) -> np.ndarray:
    """Per-slice weights ``alpha_t`` for a sequence of ``depth`` slices.

    Linear: ``2t - T - 1``. Harmonic: ``2(T-t+1) - (T+1)(H_T - H_{t-1})``.
    Both sum to zero, so any constant component of the sequence cancels.
    """
    if isinstance(depth, bool) or int(depth) != depth or depth < 1:
        raise InvalidDepth(f"sequence length must be a positive integer, got {depth!r}")
    return np.array(_coefficients(int(depth), RankVariant(variant)))


def dynamic_image_raw(v: Volume, variant: RankVariant = RankVariant.HARMONIC) -> np.ndarray:
    """Weighted slice sum before re-normalization, float64 H x W.

    Accumulates in ascending slice order so the result does not depend on
    how the work is scheduled.
    """
    alpha = rank_pool_coefficients(v.depth, variant)
    out = np.zeros(v.spatial_shape, dtype=np.float64)
    for a, s in zip(alpha, v.slices):
        out += a * s.astype(np.float64)
    return out


def dynamic_image(v: Volume, variant: RankVariant = RankVariant.HARMONIC) -> np.ndarray:
    if v.depth == 1:
        return v.slices[0].copy()
    raw = dynamic_image_raw(v, variant)
    try:
        return normalize(raw)
    except ConstantVolume:
        # depth-constant volume: nothing changes along depth
        return np.zeros(v.spatial_shape, dtype=np.float32)


def average_image(v: Volume) -> np.ndarray:
    out = np.zeros(v.spatial_shape, dtype=np.float64)
    for s in v.slices:
        out += s
    return (out / v.depth).astype(np.float32)


def space_to_channel(v: Volume, j: int) -> list[TripletImage]:
    """One triplet per slice; neighbours past either end repeat the edge slice."""
    if isinstance(j, bool) or int(j) != j or j < 0:
        raise ValueError(f"slice offset j must be a non-negative integer, got {j!r}")
    last = v.depth - 1
    out = []
    for i in range(v.depth):
        lo, hi = max(i - j, 0), min(i + j, last)
        out.append(TripletImage(np.stack([v.slices[lo], v.slices[i], v.slices[hi]]), i))
    return out
