"""Checkpoint files: a config snapshot plus the head parameters as ``.ten`` blobs.

Layout (all integers little-endian)::

    b"TFCK" | version u8 (=1)
    u32 header length | header: UTF-8 "key = value" lines, sorted by key
    u32 tensor count
    per tensor: u16 name length | UTF-8 name | u64 blob length | .ten blob

Tensors appear in the head's fixed parameter order. Parameters are stored
as float32 (the ``.ten`` payload type).
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from ..errors import BadMagic, TruncatedFile
from ..volcore import tensor_from_bytes, tensor_to_bytes
from .head import PARAM_ORDER, ClassifierHead

MAGIC = b"TFCK"
VERSION = 1


def format_kv(config: dict) -> str:
    lines = []
    for key in sorted(config):
        value = str(config[key])
        if "\n" in value or "\n" in key:
            raise ValueError(f"config entry {key!r} spans lines")
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def checkpoint_bytes(head: ClassifierHead, config: dict) -> bytes:
    snapshot = dict(config)
    snapshot.update({f"head.{k}": v for k, v in head.config().items()})
    header = format_kv(snapshot).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<B", VERSION))
    buf.write(struct.pack("<I", len(header)) + header)
    buf.write(struct.pack("<I", len(PARAM_ORDER)))
    for name in PARAM_ORDER:
        blob = tensor_to_bytes(np.atleast_1d(head.params[name]))
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)) + encoded)
        buf.write(struct.pack("<Q", len(blob)) + blob)
    return buf.getvalue()


def save_checkpoint(path: str | os.PathLike, head: ClassifierHead, config: dict) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(head, config))


def _take(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFile(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path: str | os.PathLike) -> tuple[ClassifierHead, dict[str, str]]:
    """Rebuild the head from its stored configuration and parameters."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise BadMagic(f"{path}: not a checkpoint (magic {magic!r})")
        (version,) = struct.unpack("<B", _take(f, 1, "version"))
        if version != VERSION:
            raise BadMagic(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", _take(f, 4, "header length"))
        config = parse_kv(_take(f, hlen, "header").decode("utf-8"))
        (count,) = struct.unpack("<I", _take(f, 4, "tensor count"))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _take(f, 2, "name length"))
            name = _take(f, nlen, "name").decode("utf-8")
            (blen,) = struct.unpack("<Q", _take(f, 8, "blob length"))
            tensors[name] = tensor_from_bytes(_take(f, blen, f"tensor {name}"))

    shape = tuple(int(d) for d in config["head.input_shape"].split("x"))
    head = ClassifierHead(
        shape,
        conv_filters=int(config["head.conv_filters"]),
        conv_kernel=int(config["head.conv_kernel"]),
        conv_stride=int(config["head.conv_stride"]),
        hidden=int(config["head.hidden"]),
        dropout=float(config["head.dropout"]),
    )
    missing = set(PARAM_ORDER) - set(tensors)
    if missing:
        raise TruncatedFile(f"{path}: checkpoint lacks parameters {sorted(missing)}")
    for name in PARAM_ORDER:
        head.params[name] = tensors[name].astype(np.float64).reshape(head.params[name].shape)
    return head, config
