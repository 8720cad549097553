"""Seeded generator for DBT-like synthetic slice stacks.

Every volume is a smooth background: a broad illumination field plus a dense
"tissue" texture of blobs, each fading in and out over a stretch of slices.
Gaussian noise is added on top. Positive (malignant) volumes also get one compact Gaussian lesion. It
has a fixed contrast and appears on exactly ``span`` consecutive slices. The
lesion is the only signal confined to a few slices. Depth-wise max pooling
keeps it, while averaging the slices dilutes it into the tissue clutter.

Volumes are written through one fixed intensity window by default. Per-volume
min-max scaling would let a lesion, which is always the brightest thing in
its volume, compress the whole positive volume and give the label away
through global statistics.

Each volume is drawn from its own substream keyed by ``(seed, index)``, so the
output depends only on the ``SynthSpec`` and never on call order or threading.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .volcore import Label, ManifestEntry, Split, View, Volume, normalize, save_volume, window, write_manifest

_VOLUME_STREAM = 1
_SPLIT_STREAM = 2


@dataclass(frozen=True)
class LesionSpec:
    radius_range: tuple[float, float] = (4.0, 8.0)
    contrast: float = 0.5
    span: int = 3


@dataclass(frozen=True)
class SynthSpec:
    n_negative: int = 300
    n_positive: int = 100
    depth_range: tuple[int, int] = (8, 16)
    slice_size: tuple[int, int] = (128, 128)
    lesion: LesionSpec = field(default_factory=LesionSpec)
    noise_sigma: float = 0.05
    seed: int = 0
    # background model
    background_amplitude: float = 0.05
    clutter_contrast: float = 0.1
    clutter_count: tuple[int, int] = (30, 60)
    test_fraction: float = 0.2
    # "window": one fixed intensity window for every volume; "minmax": per volume
    normalization: str = "window"

    def intensity_window(self) -> tuple[float, float]:
        margin = 4.0 * self.noise_sigma
        return -margin, self.background_amplitude + self.clutter_contrast + self.lesion.contrast + margin

    def validate(self) -> None:
        t_min, t_max = self.depth_range
        r_min, r_max = self.lesion.radius_range
        c_min, c_max = self.clutter_count
        h, w = self.slice_size
        problems = []
        if self.n_negative < 0 or self.n_positive < 0:
            problems.append("counts must be non-negative")
        if self.n_negative + self.n_positive < 1:
            problems.append("at least one volume required")
        if not 1 <= t_min <= t_max:
            problems.append(f"depth_range {self.depth_range} must satisfy 1 <= T_min <= T_max")
        if not 1 <= self.lesion.span <= t_min:
            problems.append(f"lesion span {self.lesion.span} must satisfy 1 <= span <= T_min={t_min}")
        if not 0 < r_min <= r_max:
            problems.append(f"radius_range {self.lesion.radius_range} must satisfy 0 < min <= max")
        if not self.lesion.contrast > 0:
            problems.append("lesion contrast must be > 0")
        if h < 8 or w < 8:
            problems.append(f"slice_size {self.slice_size} too small (minimum 8x8)")
        elif 2 * r_max >= min(h, w):
            problems.append("lesion radius does not fit inside the slice")
        if not self.noise_sigma >= 0:
            problems.append("noise_sigma must be >= 0")
        if self.background_amplitude < 0 or self.clutter_contrast < 0:
            problems.append("background amplitudes must be >= 0")
        if not 0 <= c_min <= c_max:
            problems.append(f"clutter_count {self.clutter_count} must satisfy 0 <= min <= max")
        if not 0 <= self.test_fraction < 1:
            problems.append("test_fraction must be in [0, 1)")
        if self.normalization not in ("window", "minmax"):
            problems.append(f"normalization must be 'window' or 'minmax', got {self.normalization!r}")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must be a non-negative 64-bit integer")
        if problems:
            raise InvalidSpec("; ".join(problems))


@dataclass
class SynthVolume:
    """One rendered volume before normalization, with its ground truth."""

    raw: np.ndarray  # T x H x W, intensity units
    lesion: np.ndarray | None  # additive lesion field, same shape as raw
    label: Label
    view: View
    volume_id: str
    lesion_slices: tuple[int, ...] = ()
    lesion_center: tuple[float, float] | None = None
    lesion_sigma: float | None = None


def volume_id(index: int) -> str:
    return f"vol_{index:05d}"


def _gaussian2d(h: int, w: int, cy: float, cx: float, sigma: float) -> np.ndarray:
    y = np.arange(h, dtype=np.float64)[:, None]
    x = np.arange(w, dtype=np.float64)[None, :]
    return np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2.0 * sigma**2))


def render_volume(spec: SynthSpec, index: int) -> SynthVolume:
    """Render volume ``index`` of ``spec`` (negatives first, then positives)."""
    n_total = spec.n_negative + spec.n_positive
    if not 0 <= index < n_total:
        raise IndexError(f"volume index {index} out of range for {n_total} volumes")
    rng = np.random.default_rng([spec.seed, _VOLUME_STREAM, index])
    h, w = spec.slice_size
    t_min, t_max = spec.depth_range
    depth = int(rng.integers(t_min, t_max + 1))
    label = Label.NEGATIVE if index < spec.n_negative else Label.MALIGNANT
    view = View.CC if rng.random() < 0.5 else View.MLO

    # broad illumination, identical on every slice
    illum = np.zeros((h, w))
    for _ in range(3):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        illum += rng.uniform(0, spec.background_amplitude / 3) * _gaussian2d(h, w, cy, cx, min(h, w) / 3)
    raw = np.broadcast_to(illum, (depth, h, w)).copy()

    # tissue texture: many lesion-sized blobs, each fading in and out over a
    # stretch of slices; tanh keeps the summed texture below clutter_contrast
    r_min, r_max = spec.lesion.radius_range
    n_clutter = int(rng.integers(spec.clutter_count[0], spec.clutter_count[1] + 1))
    density = rng.uniform(0.5, 1.0)
    t = np.arange(depth, dtype=np.float64)
    texture = np.zeros((depth, h, w))
    for _ in range(n_clutter):
        amp = rng.uniform(0.25, 1.0) * density * spec.clutter_contrast
        sigma = rng.uniform(r_min / 2, r_max)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        z0 = rng.uniform(0, depth - 1)
        z_sigma = rng.uniform(depth / 8, depth / 2)
        profile = np.exp(-((t - z0) ** 2) / (2.0 * z_sigma**2))
        texture += amp * profile[:, None, None] * _gaussian2d(h, w, cy, cx, sigma)[None]
    if spec.clutter_contrast > 0:
        raw += spec.clutter_contrast * np.tanh(texture / spec.clutter_contrast)

    lesion = None
    lesion_slices: tuple[int, ...] = ()
    center = None
    lesion_sigma = None
    if label is Label.MALIGNANT:
        radius = rng.uniform(r_min, r_max)
        lesion_sigma = radius / 2
        cy = rng.uniform(radius, h - radius)
        cx = rng.uniform(radius, w - radius)
        start = int(rng.integers(0, depth - spec.lesion.span + 1))
        lesion_slices = tuple(range(start, start + spec.lesion.span))
        center = (cy, cx)
        lesion = np.zeros((depth, h, w))
        lesion[start : start + spec.lesion.span] = spec.lesion.contrast * _gaussian2d(h, w, cy, cx, lesion_sigma)
        raw += lesion

    raw += rng.normal(0.0, spec.noise_sigma, size=raw.shape)
    return SynthVolume(raw, lesion, label, view, volume_id(index), lesion_slices, center, lesion_sigma)


def split_assignment(spec: SynthSpec) -> list[Split]:
    """Stratified train/test split, ``test_fraction`` of each class to test."""
    rng = np.random.default_rng([spec.seed, _SPLIT_STREAM])
    splits = [Split.TRAIN] * (spec.n_negative + spec.n_positive)
    for lo, hi in ((0, spec.n_negative), (spec.n_negative, spec.n_negative + spec.n_positive)):
        n = hi - lo
        n_test = int(round(n * spec.test_fraction))
        for i in rng.permutation(n)[:n_test]:
            splits[lo + int(i)] = Split.TEST
    return splits


def synth_volume(spec: SynthSpec, index: int) -> Volume:
    sv = render_volume(spec, index)
    if spec.normalization == "minmax":
        slices = normalize(sv.raw)
    else:
        slices = window(sv.raw, *spec.intensity_window())
    return Volume(slices, sv.view, sv.label, sv.volume_id)


def synth_generate(spec: SynthSpec, out_dir: str | os.PathLike) -> list[ManifestEntry]:
    """Write every volume as ``volumes/<id>.ten`` plus ``manifest.csv``."""
    spec.validate()
    out_dir = Path(out_dir)
    (out_dir / "volumes").mkdir(parents=True, exist_ok=True)
    splits = split_assignment(spec)
    entries = []
    for index in range(spec.n_negative + spec.n_positive):
        v = synth_volume(spec, index)
        rel = f"volumes/{v.id}.ten"
        save_volume(v, out_dir / rel)
        entries.append(ManifestEntry(rel, v.label, v.view, splits[index]))
    write_manifest(entries, out_dir / "manifest.csv")
    return entries
