"""End-to-end training: fusion -> frozen extractor -> (pooling) -> head.

The extractor never changes during training. Feature maps can therefore be
cached per ``(volume, augmentation)`` and shared between runs that use the
same extractor, e.g. the pooling ablation.
"""

from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, MissingClass
from ..featpool import ExternalExtractor, FeatureExtractor, PoolMethod, extract_stack, pool_depth
from ..fusion import RankVariant, average_image, dynamic_image, space_to_channel
from ..metrics import auroc
from ..volcore import ManifestEntry, Split, Volume, load_volume
from .head import ClassifierHead
from .optim import AdamState, adam_step
from .sampling import IDENTITY, Augmentation, allowed_augmentations, augment, balanced_batches

log = logging.getLogger(__name__)


class Fusion(enum.Enum):
    LATE = "late"
    EARLY_AVERAGE = "early-average"
    EARLY_DYNAMIC = "early-dynamic"
    SPACE_TO_CHANNEL = "space-to-channel"

    @property
    def pooled(self) -> bool:
        return self in (Fusion.LATE, Fusion.SPACE_TO_CHANNEL)


@dataclass(frozen=True)
class FusionConfig:
    strategy: Fusion = Fusion.LATE
    pooling: PoolMethod = PoolMethod.MAX
    variant: RankVariant = RankVariant.HARMONIC
    j: int = 1

    def describe(self) -> str:
        if self.strategy is Fusion.LATE:
            return f"late-{self.pooling.value}"
        if self.strategy is Fusion.SPACE_TO_CHANNEL:
            return f"s2c-j{self.j}-{self.pooling.value}"
        if self.strategy is Fusion.EARLY_DYNAMIC:
            return f"early-dynamic-{self.variant.value}"
        return "early-average"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-4
    dropout: float = 0.5
    weight_decay: float = 1e-4
    epochs: int = 20
    seed: int = 0
    fusion: FusionConfig = field(default_factory=FusionConfig)
    augment: bool = True
    val_fraction: float = 0.2
    hidden: int = 1024
    conv_filters: int = 64
    conv_kernel: int = 3
    conv_stride: int = 1

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")


class Featurizer:
    """Turns a volume (under one augmentation) into the head's input map.

    ``cache`` may be shared between featurizers; keys carry the extractor
    identity, so different extractors never collide. Pooled paths store
    all three pooling reductions at once.
    """

    def __init__(self, extractor: FeatureExtractor, fusion: FusionConfig, root: str | os.PathLike = ".", cache: dict | None = None):
        self.extractor = extractor
        self.fusion = fusion
        self.root = root
        self.cache = {} if cache is None else cache
        if isinstance(extractor, ExternalExtractor) and fusion.strategy is not Fusion.LATE:
            raise ConfigError("external per-slice features only support late fusion")
        self._ext_key = repr(extractor) if not isinstance(extractor, ExternalExtractor) else f"external:{extractor.features_dir}"

    def _path_key(self) -> tuple:
        f = self.fusion
        if f.strategy is Fusion.SPACE_TO_CHANNEL:
            return (f.strategy.value, f.j)
        if f.strategy is Fusion.EARLY_DYNAMIC:
            return (f.strategy.value, f.variant.value)
        return (f.strategy.value,)

    def input_shape(self, spatial_shape: tuple[int, int]) -> tuple[int, int, int]:
        return tuple(self.extractor.output_shape(*spatial_shape))

    def compute(self, v: Volume, aug: Augmentation = IDENTITY):
        f = self.fusion
        if f.strategy is Fusion.LATE:
            if isinstance(self.extractor, ExternalExtractor):
                if aug != IDENTITY:
                    raise ConfigError("external features cannot be augmented; disable augmentation")
                stack = self.extractor.volume_stack(v.id, v.depth)
            else:
                stack = extract_stack(self.extractor, augment(v.slices, aug), v.id)
            return {m: pool_depth(stack, m).astype(np.float32) for m in PoolMethod}
        if f.strategy is Fusion.SPACE_TO_CHANNEL:
            triplets = [augment(tr.channels, aug) for tr in space_to_channel(v, f.j)]
            stack = extract_stack(self.extractor, triplets, v.id)
            return {m: pool_depth(stack, m).astype(np.float32) for m in PoolMethod}
        img = average_image(v) if f.strategy is Fusion.EARLY_AVERAGE else dynamic_image(v, f.variant)
        return self.extractor.extract(augment(img, aug))

    def features(self, entry: ManifestEntry, aug: Augmentation = IDENTITY) -> np.ndarray:
        key = (self._ext_key, self._path_key(), entry.path, aug)
        hit = self.cache.get(key)
        if hit is None:
            hit = self.compute(load_volume(entry, self.root), aug)
            self.cache[key] = hit
        if isinstance(hit, dict):
            hit = hit[self.fusion.pooling]
        return hit

    def batch(self, entries, augs=None) -> np.ndarray:
        augs = augs if augs is not None else [IDENTITY] * len(entries)
        return np.stack([self.features(e, a) for e, a in zip(entries, augs)]).astype(np.float64)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_auroc: float


@dataclass
class TrainResult:
    head: ClassifierHead
    history: list[EpochRecord]
    config: TrainConfig
    best_epoch: int
    effective_batch_size: int


def holdout_split(targets: np.ndarray, fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Stratified (fit, validation) index split."""
    rng = np.random.default_rng(seed)
    val = []
    for cls in (0, 1):
        idx = np.flatnonzero(targets == cls)
        n_val = int(round(len(idx) * fraction))
        val.extend(rng.permutation(idx)[:n_val].tolist())
    val = np.array(sorted(val), dtype=np.int64)
    fit = np.setdiff1d(np.arange(len(targets)), val)
    return fit, val


def effective_batch_size(requested: int, targets: np.ndarray) -> int:
    """Shrink ``requested`` so a half-batch never exceeds the majority class."""
    majority = max(int((targets == 0).sum()), int((targets == 1).sum()))
    return max(2, min(requested, 2 * majority))


def score_entries(head: ClassifierHead, featurizer: Featurizer, entries, chunk: int = 256) -> np.ndarray:
    out = []
    for i in range(0, len(entries), chunk):
        out.append(np.atleast_1d(head.forward(featurizer.batch(entries[i : i + chunk]))))
    return np.concatenate(out) if out else np.zeros(0)


def train(cfg: TrainConfig, entries: list[ManifestEntry], extractor: FeatureExtractor,
          root: str | os.PathLike = ".", cache: dict | None = None) -> TrainResult:
    """Train a head on the TRAIN split of ``entries``; returns the best-validation head.

    A stratified ``val_fraction`` of the training split is held out for model
    selection. If that holdout lacks a class, selection falls back to the
    training loss and ``val_auroc`` is recorded as NaN.
    """
    train_entries = [e for e in entries if e.split is Split.TRAIN]
    targets = np.array([e.label.target for e in train_entries], dtype=np.int64)
    if not train_entries or targets.min() == targets.max():
        raise MissingClass("training split needs both negative and positive volumes")

    featurizer = Featurizer(extractor, cfg.fusion, root, cache)
    first = load_volume(train_entries[0], root)
    head = ClassifierHead(featurizer.input_shape(first.spatial_shape), cfg.conv_filters, cfg.conv_kernel,
                          cfg.conv_stride, cfg.hidden, cfg.dropout, seed=cfg.seed)

    fit_idx, val_idx = holdout_split(targets, cfg.val_fraction, [cfg.seed, 10])
    fit_targets = targets[fit_idx]
    if fit_targets.min() == fit_targets.max():
        raise MissingClass("fit portion of the training split lost a class; lower val_fraction")
    val_entries = [train_entries[i] for i in val_idx]
    val_targets = targets[val_idx]
    has_val = val_targets.size > 0 and val_targets.min() != val_targets.max()
    batch_size = effective_batch_size(cfg.batch_size, fit_targets)
    if batch_size != cfg.batch_size:
        log.info("batch size reduced from %d to %d for %d fit volumes", cfg.batch_size, batch_size, len(fit_idx))
    augs = allowed_augmentations(*first.spatial_shape) if cfg.augment else (IDENTITY,)
    if isinstance(extractor, ExternalExtractor):
        augs = (IDENTITY,)

    state = AdamState(lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    aug_rng = np.random.default_rng([cfg.seed, 12])
    drop_rng = np.random.default_rng([cfg.seed, 13])
    history: list[EpochRecord] = []
    best_params, best_score, best_epoch = head.copy_params(), -np.inf, 0

    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for batch in balanced_batches(fit_targets, batch_size, [cfg.seed, 11, epoch]):
            members = [train_entries[fit_idx[i]] for i in batch]
            chosen = [augs[k] for k in aug_rng.integers(0, len(augs), size=len(members))]
            x = featurizer.batch(members, chosen)
            loss, grads = head.backward(x, fit_targets[batch], train_mode=True, rng=drop_rng)
            adam_step(head.params, grads, state)
            losses.append(loss)
        train_loss = float(np.mean(losses))
        if has_val:
            val_auc = auroc(score_entries(head, featurizer, val_entries), val_targets)
            score = val_auc
        else:
            val_auc, score = float("nan"), -train_loss
        history.append(EpochRecord(epoch, train_loss, val_auc))
        log.info("epoch %d: train_loss=%.4f val_auroc=%.4f", epoch, train_loss, val_auc)
        if score > best_score:
            best_params, best_score, best_epoch = head.copy_params(), score, epoch

    head.params = best_params
    return TrainResult(head, history, cfg, best_epoch, batch_size)
