"""2D feature extraction per slice and depth-wise pooling to a fixed-size map.

Extractors map a ``C x H x W`` image to a ``C' x H' x W'`` feature map. The
pooling step reduces a variable-length stack of such maps (one per slice or
triplet) element-wise over the slice axis. The result has the same shape
whatever the number of slices, which is what makes late fusion work for
volumes of any depth.
"""

from __future__ import annotations

import abc
import enum
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch, ShapeUnsupported
from .volcore import read_tensor


class PoolMethod(enum.Enum):
    MIN = "min"
    AVG = "avg"
    MAX = "max"


@dataclass(frozen=True)
class FeatureStack:
    maps: np.ndarray  # T x C' x H' x W'
    source_volume_id: str = ""

    def __post_init__(self):
        if self.maps.ndim != 4 or self.maps.shape[0] < 1:
            raise ShapeMismatch(f"feature stack must be T x C x H x W with T >= 1, got {self.maps.shape}")

    @property
    def depth(self) -> int:
        return self.maps.shape[0]


class FeatureExtractor(abc.ABC):
    name: str

    @abc.abstractmethod
    def output_shape(self, height: int, width: int) -> tuple[int, int, int]:
        """Feature-map shape ``(C', H', W')`` for an ``height x width`` input."""

    @abc.abstractmethod
    def extract(self, img: np.ndarray) -> np.ndarray:
        """Features of one image given as ``H x W``, ``1 x H x W`` or ``3 x H x W``."""


# (n_filters, kernel, stride, pool)
PRESETS: dict[str, tuple[int, int, int, int]] = {
    # desk-scale default for 128 x 128 slices -> 16 x 5 x 5
    "desk": (16, 5, 2, 12),
    # 1024 x 1024 -> 256 x 31 x 31
    "alexnet-like": (256, 11, 4, 8),
    # 1024 x 1024 -> 2048 x 4 x 4
    "resnet-like": (2048, 32, 32, 8),
    # 1024 x 1024 -> 2048 x 32 x 32
    "xception-like": (2048, 32, 32, 1),
}


class ToyExtractor(FeatureExtractor):
    """Frozen random-filter extractor: conv (no padding) -> ReLU -> max pool.

    Output size per spatial axis is ``((n - kernel) // stride + 1) // pool``;
    trailing rows/columns that do not fill a whole pooling window are dropped.
    Filters are drawn once from ``N(0, 1/fan_in)`` with a seeded generator and
    never change; there is no bias, so an all-zero image yields all-zero
    features.
    """

    in_channels = 3

    def __init__(self, n_filters: int = 16, kernel: int = 5, stride: int = 2, pool: int = 4, seed: int = 0, name: str = "toy"):
        if min(n_filters, kernel, stride, pool) < 1:
            raise ValueError("n_filters, kernel, stride and pool must all be >= 1")
        self.n_filters = n_filters
        self.kernel = kernel
        self.stride = stride
        self.pool = pool
        self.seed = seed
        self.name = name
        fan_in = self.in_channels * kernel * kernel
        rng = np.random.default_rng([seed, n_filters, kernel])
        weights = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(n_filters, self.in_channels, kernel, kernel))
        self.weights = weights.astype(np.float32)
        self.weights.setflags(write=False)
        # im2col layouts: RGB input and channel-replicated grayscale input
        self._w_rgb = np.ascontiguousarray(self.weights.reshape(n_filters, -1).T)
        self._w_gray = np.ascontiguousarray(self.weights.sum(axis=1).reshape(n_filters, -1).T)

    @classmethod
    def from_preset(cls, preset: str, seed: int = 0) -> "ToyExtractor":
        try:
            n_filters, kernel, stride, pool = PRESETS[preset]
        except KeyError:
            raise ValueError(f"unknown extractor preset {preset!r}; choose from {sorted(PRESETS)}") from None
        return cls(n_filters, kernel, stride, pool, seed=seed, name=preset)

    def __repr__(self):
        return (f"ToyExtractor(name={self.name!r}, n_filters={self.n_filters}, kernel={self.kernel}, "
                f"stride={self.stride}, pool={self.pool}, seed={self.seed})")

    def _conv_size(self, n: int) -> int:
        if n < self.kernel:
            return 0
        return (n - self.kernel) // self.stride + 1

    def output_shape(self, height: int, width: int) -> tuple[int, int, int]:
        h1, w1 = self._conv_size(height), self._conv_size(width)
        h2, w2 = h1 // self.pool, w1 // self.pool
        if h2 < 1 or w2 < 1:
            raise ShapeUnsupported(
                f"{self.name}: input {height}x{width} too small for kernel {self.kernel}, "
                f"stride {self.stride}, pool {self.pool}"
            )
        return self.n_filters, h2, w2

    def extract(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img, dtype=np.float32)
        if img.ndim == 2:
            img = img[None]
        if img.ndim != 3 or img.shape[0] not in (1, 3):
            raise ShapeMismatch(f"expected H x W, 1 x H x W or 3 x H x W image, got {img.shape}")
        if not np.all(np.isfinite(img)):
            raise ValueError("image contains non-finite values")
        channels, height, width = img.shape
        n_filters, out_h, out_w = self.output_shape(height, width)
        k, s, p = self.kernel, self.stride, self.pool
        # a grayscale image stands for three identical channels; folding the
        # replication into the filters gives the same features at 1/3 the cost
        w = self._w_gray if channels == 1 else self._w_rgb
        windows = sliding_window_view(img, (k, k), axis=(1, 2))[:, ::s, ::s]
        h1, w1 = windows.shape[1], windows.shape[2]
        cols = windows.transpose(1, 2, 0, 3, 4).reshape(h1 * w1, channels * k * k)
        act = np.maximum(cols @ w, 0.0).reshape(h1, w1, n_filters)
        act = act[: out_h * p, : out_w * p].reshape(out_h, p, out_w, p, n_filters)
        return np.ascontiguousarray(act.max(axis=(1, 3)).transpose(2, 0, 1))


class ExternalExtractor(FeatureExtractor):
    """Serves precomputed per-slice features from ``<dir>/<volume_id>/<slice:04d>.ten``.

    It can only look features up by volume and slice, so it works for late
    fusion over plain slices, not for fused images.
    """

    def __init__(self, features_dir: str | os.PathLike, name: str = "external"):
        self.features_dir = Path(features_dir)
        self.name = name
        self._shape: tuple[int, int, int] | None = None

    def path_for(self, volume_id: str, slice_index: int) -> Path:
        return self.features_dir / volume_id / f"{slice_index:04d}.ten"

    def slice_features(self, volume_id: str, slice_index: int) -> np.ndarray:
        fm = read_tensor(self.path_for(volume_id, slice_index))
        if fm.ndim != 3:
            raise ShapeMismatch(f"{self.path_for(volume_id, slice_index)}: expected rank-3 features, got {fm.shape}")
        if self._shape is None:
            self._shape = fm.shape
        elif fm.shape != self._shape:
            raise ShapeMismatch(f"external features change shape: {fm.shape} vs {self._shape}")
        return fm

    def volume_stack(self, volume_id: str, depth: int) -> FeatureStack:
        return FeatureStack(np.stack([self.slice_features(volume_id, i) for i in range(depth)]), volume_id)

    def output_shape(self, height: int, width: int) -> tuple[int, int, int]:
        if self._shape is None:
            first = sorted(self.features_dir.glob("*/0000.ten"))
            if not first:
                raise ShapeUnsupported(f"no precomputed features under {self.features_dir}")
            self._shape = read_tensor(first[0]).shape
        return self._shape

    def extract(self, img: np.ndarray) -> np.ndarray:
        raise ShapeUnsupported("external features are looked up by volume id and slice index, not computed from pixels")


def extract(e: FeatureExtractor, img: np.ndarray) -> np.ndarray:
    return e.extract(img)


def extract_stack(e: FeatureExtractor, inputs, source_volume_id: str = "") -> FeatureStack:
    inputs = [np.asarray(x) for x in inputs]
    if not inputs:
        raise ShapeMismatch("extract_stack needs at least one input")
    shapes = {x.shape for x in inputs}
    if len(shapes) != 1:
        raise ShapeMismatch(f"all inputs must share one shape, got {sorted(shapes)}")
    return FeatureStack(np.stack([e.extract(x) for x in inputs]), source_volume_id)


def pool_depth(fs: FeatureStack | np.ndarray, method: PoolMethod | str = PoolMethod.MAX) -> np.ndarray:
    """Element-wise min/avg/max over the slice axis; returns float64 ``C' x H' x W'``."""
    maps = fs.maps if isinstance(fs, FeatureStack) else np.asarray(fs)
    if maps.ndim != 4 or maps.shape[0] < 1:
        raise ShapeMismatch(f"expected T x C x H x W stack, got {maps.shape}")
    method = PoolMethod(method)
    if method is PoolMethod.MAX:
        return maps.max(axis=0).astype(np.float64)
    if method is PoolMethod.MIN:
        return maps.min(axis=0).astype(np.float64)
    acc = np.zeros(maps.shape[1:], dtype=np.float64)
    for m in maps:
        acc += m
    return acc / maps.shape[0]
