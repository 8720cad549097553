"""Volume data model, the ``.ten`` tensor file format and dataset manifests.

A volume is an ordered stack of ``T`` equally sized grayscale slices held as a
``float32`` array of shape ``(T, H, W)``.  Tensors are plain numpy arrays; the
``.ten`` format stores them as little-endian float32 with an explicit shape::

    b"TNSR" | version u8 (=1) | rank u8 | rank x u32 LE dims | float32 LE payload
"""

from __future__ import annotations

import csv
import enum
import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, ConstantVolume, InvalidVolume, ShapeOverflow, TruncatedFile

MAGIC = b"TNSR"
VERSION = 1
_U32_MAX = 2**32 - 1


class View(enum.Enum):
    CC = "CC"
    MLO = "MLO"


class Label(enum.Enum):
    NEGATIVE = "negative"
    BENIGN = "benign"
    MALIGNANT = "malignant"

    @property
    def target(self) -> int:
        """Binary training target: only malignant cases count as positive."""
        return 1 if self is Label.MALIGNANT else 0


class Split(enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class Volume:
    slices: np.ndarray
    view: View
    label: Label
    id: str

    def __post_init__(self):
        s = self.slices
        if s.ndim != 3 or s.shape[0] < 1 or s.shape[1] < 1 or s.shape[2] < 1:
            raise InvalidVolume(f"volume {self.id!r}: expected T x H x W with T >= 1, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise InvalidVolume(f"volume {self.id!r}: non-finite intensities")

    @property
    def depth(self) -> int:
        return self.slices.shape[0]

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.slices.shape[1], self.slices.shape[2]


def normalize(raw: np.ndarray) -> np.ndarray:
    """Affinely map ``raw`` onto [0, 1] (min -> 0, max -> 1) as float32."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise ValueError("normalize: input contains non-finite values")
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        raise ConstantVolume(f"cannot normalize a constant tensor (value {lo})")
    out = (raw - lo) / (hi - lo)
    # float64 rounding can land a hair outside the unit interval
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def window(raw: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Fixed intensity window: map ``[lo, hi]`` onto [0, 1] and clip, as float32."""
    if not hi > lo:
        raise ValueError(f"window needs hi > lo, got [{lo}, {hi}]")
    raw = np.asarray(raw, dtype=np.float64)
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# .ten tensor files
# ---------------------------------------------------------------------------


def tensor_to_bytes(t: np.ndarray) -> bytes:
    t = np.asarray(t)
    if t.ndim < 1:
        raise ShapeOverflow("tensor rank must be >= 1; scalars are not representable")
    if t.ndim > 255:
        raise ShapeOverflow(f"rank {t.ndim} does not fit in a u8")
    if any(d < 1 or d > _U32_MAX for d in t.shape):
        raise ShapeOverflow(f"dims must be in [1, 2^32-1], got {t.shape}")
    data = np.ascontiguousarray(t, dtype="<f4")
    if not np.all(np.isfinite(data)):
        raise ValueError("tensor contains non-finite values")
    header = MAGIC + struct.pack("<BB", VERSION, t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape)
    return header + data.tobytes()


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFile(f"truncated tensor file while reading {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor_from(f) -> np.ndarray:
    """Read one tensor from a binary stream positioned at its magic bytes."""
    magic = f.read(4)
    if len(magic) < 4 and MAGIC.startswith(magic):
        raise TruncatedFile("truncated tensor file while reading magic")
    if magic != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {magic!r}")
    version, rank = struct.unpack("<BB", _read_exact(f, 2, "header"))
    if version != VERSION:
        raise BadMagic(f"unsupported .ten version {version}")
    if rank < 1:
        raise ShapeOverflow("rank 0 tensor in file")
    dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dims"))
    if any(d == 0 for d in dims):
        raise ShapeOverflow(f"zero-length dimension in {dims}")
    count = 1
    for d in dims:
        count *= d
    if count * 4 > 2**40:
        raise ShapeOverflow(f"payload for shape {dims} is implausibly large")
    payload = _read_exact(f, 4 * count, "payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    return read_tensor_from(io.BytesIO(buf))


def write_tensor(t: np.ndarray, path: str | os.PathLike) -> None:
    blob = tensor_to_bytes(t)
    Path(path).write_bytes(blob)


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        t = read_tensor_from(f)
        if f.read(1):
            raise TruncatedFile(f"{path}: trailing bytes after tensor payload")
    return t


# ---------------------------------------------------------------------------
# Manifests and volume files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: Label
    view: View
    split: Split

    @property
    def volume_id(self) -> str:
        return Path(self.path).stem


MANIFEST_HEADER = ("path", "label", "view", "split")


def write_manifest(entries: list[ManifestEntry], path: str | os.PathLike) -> None:
    paths = [e.path for e in entries]
    if len(set(paths)) != len(paths):
        raise ValueError("manifest paths must be unique")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in entries:
            w.writerow([e.path, e.label.value, e.view.value, e.split.value])


def read_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != MANIFEST_HEADER:
            raise ValueError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
        entries = []
        for row in reader:
            try:
                entries.append(
                    ManifestEntry(row["path"], Label(row["label"]), View(row["view"]), Split(row["split"]))
                )
            except ValueError as exc:
                raise ValueError(f"{path}: bad manifest row {row}: {exc}") from None
    paths = [e.path for e in entries]
    if len(set(paths)) != len(paths):
        raise ValueError(f"{path}: duplicate volume paths")
    return entries


def save_volume(v: Volume, path: str | os.PathLike) -> None:
    write_tensor(v.slices, path)


def load_volume(entry: ManifestEntry, root: str | os.PathLike = ".") -> Volume:
    path = Path(root) / entry.path
    slices = read_tensor(path)
    if slices.ndim != 3:
        raise InvalidVolume(f"{path}: expected a rank-3 tensor, got shape {slices.shape}")
    return Volume(slices, entry.view, entry.label, entry.volume_id)


def load_slice_directory(directory: str | os.PathLike, label: Label, view: View, volume_id: str | None = None) -> Volume:
    """Build a normalized volume from one 8/16-bit grayscale image per slice.

    Files are taken in lexicographic order of their names.
    """
    from PIL import Image

    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.is_file() and not p.name.startswith("."))
    if not files:
        raise InvalidVolume(f"{directory}: no slice images found")
    slices = []
    for p in files:
        with Image.open(p) as im:
            arr = np.asarray(im)
        if arr.ndim != 2:
            raise InvalidVolume(f"{p}: expected a single-channel grayscale image, got shape {arr.shape}")
        slices.append(arr.astype(np.float64))
    shapes = {s.shape for s in slices}
    if len(shapes) != 1:
        raise InvalidVolume(f"{directory}: slices have differing shapes {sorted(shapes)}")
    return Volume(normalize(np.stack(slices)), view, label, volume_id or directory.name)
