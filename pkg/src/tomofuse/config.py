"""Run configuration: a typed key schema, ``section.key = value`` files and overrides.

Values are resolved in this order, highest first: command-line flags, the
config file, then the documented default. Seed keys fall back to the
``TOMOFUSE_SEED`` environment variable before their default.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .featpool import PRESETS, ExternalExtractor, FeatureExtractor, PoolMethod, ToyExtractor
from .fusion import RankVariant
from .learner.checkpoint import parse_kv
from .learner.training import Fusion, FusionConfig, TrainConfig
from .synth import LesionSpec, SynthSpec

SEED_ENV = "TOMOFUSE_SEED"


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    return int(text.strip(), 10)


def _choice(*options):
    def parse(text: str) -> str:
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _list(item):
    def parse(text: str) -> tuple:
        return tuple(item(part) for part in text.split(",") if part.strip())
    return parse


@dataclass(frozen=True)
class Key:
    parse: object
    default: str
    doc: str


_FUSIONS = tuple(f.value for f in Fusion)
_POOLS = tuple(p.value for p in PoolMethod)
_VARIANTS = tuple(v.value for v in RankVariant)

SCHEMA: dict[str, Key] = {
    "synth.n_negative": Key(_int, "300", "negative volumes"),
    "synth.n_positive": Key(_int, "100", "malignant volumes"),
    "synth.depth_min": Key(_int, "8", "fewest slices per volume"),
    "synth.depth_max": Key(_int, "16", "most slices per volume"),
    "synth.height": Key(_int, "128", "slice height"),
    "synth.width": Key(_int, "128", "slice width"),
    "synth.lesion_radius_min": Key(float, "4.0", "smallest lesion radius (pixels)"),
    "synth.lesion_radius_max": Key(float, "8.0", "largest lesion radius (pixels)"),
    "synth.lesion_contrast": Key(float, "0.5", "lesion peak intensity"),
    "synth.lesion_span": Key(_int, "3", "consecutive slices carrying the lesion"),
    "synth.noise_sigma": Key(float, "0.05", "Gaussian noise level"),
    "synth.background_amplitude": Key(float, "0.05", "illumination field amplitude"),
    "synth.clutter_contrast": Key(float, "0.1", "tissue texture ceiling"),
    "synth.clutter_min": Key(_int, "30", "fewest texture blobs"),
    "synth.clutter_max": Key(_int, "60", "most texture blobs"),
    "synth.test_fraction": Key(float, "0.2", "share of each class sent to the test split"),
    "synth.normalization": Key(_choice("window", "minmax"), "window", "intensity scaling"),
    "synth.seed": Key(_int, "0", "dataset seed"),
    "extractor.kind": Key(_choice("toy", "external"), "toy", "feature source"),
    "extractor.preset": Key(_choice(*PRESETS), "desk", "toy extractor shape preset"),
    "extractor.seed": Key(_int, "0", "toy extractor filter seed"),
    "extractor.features_dir": Key(str, "", "precomputed features for kind=external"),
    "fusion.strategy": Key(_choice(*_FUSIONS), "late", "how slices are combined"),
    "fusion.pooling": Key(_choice(*_POOLS), "max", "depth pooling for late/space-to-channel"),
    "fusion.variant": Key(_choice(*_VARIANTS), "harmonic", "dynamic image coefficients"),
    "fusion.j": Key(_int, "1", "space-to-channel slice offset"),
    "train.batch_size": Key(_int, "256", "requested batch size"),
    "train.lr": Key(float, "0.0001", "Adam learning rate"),
    "train.dropout": Key(float, "0.5", "dropout on the hidden layer"),
    "train.weight_decay": Key(float, "0.0001", "L2 penalty"),
    "train.epochs": Key(_int, "20", "training epochs"),
    "train.seed": Key(_int, "0", "training seed"),
    "train.val_fraction": Key(float, "0.2", "share of train held out for model selection"),
    "train.augment": Key(_bool, "true", "random flips and rotations"),
    "train.hidden": Key(_int, "1024", "hidden units"),
    "train.conv_filters": Key(_int, "64", "head conv filters"),
    "train.conv_kernel": Key(_int, "3", "head conv kernel"),
    "train.conv_stride": Key(_int, "1", "head conv stride"),
    "ablate.fusions": Key(_list(_choice(*_FUSIONS)), "late", "strategies to compare"),
    "ablate.poolings": Key(_list(_choice(*_POOLS)), "min,avg,max", "pooling methods to compare"),
    "ablate.presets": Key(_list(_choice(*PRESETS)), "desk", "extractor presets to compare"),
    "ablate.js": Key(_list(_int), "1", "space-to-channel offsets to compare"),
    "ablate.seeds": Key(_list(_int), "0,1,2", "training seeds per cell"),
    "run.data": Key(str, "", "dataset directory holding manifest.csv"),
    "run.out": Key(str, "", "output directory"),
    "run.split": Key(_choice("train", "test"), "test", "split scored by eval"),
}

SEED_KEYS = ("synth.seed", "train.seed")


class RunConfig:
    """Resolved configuration; ``cfg["train.lr"]`` returns the parsed value."""

    def __init__(self, raw: dict[str, str], sources: dict[str, str]):
        self.raw = dict(raw)
        self.sources = dict(sources)
        self.values = {}
        for key, text in self.raw.items():
            try:
                self.values[key] = SCHEMA[key].parse(text)
            except ValueError as exc:
                raise ConfigError(f"{key} = {text!r}: {exc}") from None

    def __getitem__(self, key: str):
        return self.values[key]

    def snapshot(self, prefixes=("synth.", "extractor.", "fusion.", "train.")) -> dict[str, str]:
        return {k: v for k, v in sorted(self.raw.items()) if k.startswith(prefixes)}

    def synth_spec(self) -> SynthSpec:
        v = self.values
        return SynthSpec(
            n_negative=v["synth.n_negative"], n_positive=v["synth.n_positive"],
            depth_range=(v["synth.depth_min"], v["synth.depth_max"]),
            slice_size=(v["synth.height"], v["synth.width"]),
            lesion=LesionSpec((v["synth.lesion_radius_min"], v["synth.lesion_radius_max"]),
                              v["synth.lesion_contrast"], v["synth.lesion_span"]),
            noise_sigma=v["synth.noise_sigma"], seed=v["synth.seed"],
            background_amplitude=v["synth.background_amplitude"],
            clutter_contrast=v["synth.clutter_contrast"],
            clutter_count=(v["synth.clutter_min"], v["synth.clutter_max"]),
            test_fraction=v["synth.test_fraction"], normalization=v["synth.normalization"],
        )

    def fusion(self) -> FusionConfig:
        v = self.values
        if v["fusion.j"] < 0:
            raise ConfigError("fusion.j must be >= 0")
        return FusionConfig(Fusion(v["fusion.strategy"]), PoolMethod(v["fusion.pooling"]),
                            RankVariant(v["fusion.variant"]), v["fusion.j"])

    def train_config(self) -> TrainConfig:
        v = self.values
        if not 0 <= v["train.dropout"] < 1:
            raise ConfigError("train.dropout must be in [0, 1)")
        if not v["train.lr"] > 0:
            raise ConfigError("train.lr must be > 0")
        return TrainConfig(
            batch_size=v["train.batch_size"], learning_rate=v["train.lr"], dropout=v["train.dropout"],
            weight_decay=v["train.weight_decay"], epochs=v["train.epochs"], seed=v["train.seed"],
            fusion=self.fusion(), augment=v["train.augment"], val_fraction=v["train.val_fraction"],
            hidden=v["train.hidden"], conv_filters=v["train.conv_filters"],
            conv_kernel=v["train.conv_kernel"], conv_stride=v["train.conv_stride"],
        )

    def extractor(self) -> FeatureExtractor:
        v = self.values
        if v["extractor.kind"] == "external":
            if not v["extractor.features_dir"]:
                raise ConfigError("extractor.kind = external needs extractor.features_dir")
            return ExternalExtractor(v["extractor.features_dir"])
        return ToyExtractor.from_preset(v["extractor.preset"], seed=v["extractor.seed"])


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 text ({exc})") from None
    try:
        return parse_kv(text)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def resolve(file_values: dict[str, str] | None = None, overrides: dict[str, str] | None = None,
            environ: dict[str, str] | None = None) -> RunConfig:
    """Merge defaults, environment seed, file values and overrides; unknown keys are errors."""
    file_values = file_values or {}
    overrides = overrides or {}
    environ = os.environ if environ is None else environ
    for origin, values in (("config file", file_values), ("command line", overrides)):
        unknown = sorted(set(values) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown {origin} key(s): {', '.join(unknown)}")
    raw = {k: key.default for k, key in SCHEMA.items()}
    sources = {k: "default" for k in SCHEMA}
    env_seed = environ.get(SEED_ENV)
    if env_seed is not None and env_seed.strip():
        for k in SEED_KEYS:
            raw[k], sources[k] = env_seed.strip(), "env"
    for origin, values in (("file", file_values), ("cli", overrides)):
        for k, v in values.items():
            raw[k], sources[k] = str(v), origin
    return RunConfig(raw, sources)
