"""Grid ablation over fusion strategy, depth pooling, extractor preset and ``j``.

Every grid cell is trained once per seed on the train split and scored on the
test split. Feature maps are cached per extractor and shared by all cells, so
a pooling sweep pays for feature extraction only once.
"""

from __future__ import annotations

import csv
import itertools
import os
import statistics
from dataclasses import dataclass, replace

from .featpool import FeatureExtractor, PoolMethod, ToyExtractor
from .fusion import RankVariant
from .learner.training import Featurizer, Fusion, FusionConfig, TrainConfig, score_entries, train
from .metrics import auroc
from .volcore import ManifestEntry, Split

ABLATION_COLUMNS = (
    "approach", "architecture", "fusion", "pooling", "j", "batch_size",
    "learning_rate", "dropout", "auroc", "auroc_median", "n_seeds",
)


@dataclass(frozen=True)
class AblationCell:
    fusion: FusionConfig
    preset: str = "desk"


@dataclass(frozen=True)
class AblationRow:
    cell: AblationCell
    config: TrainConfig
    aurocs: tuple[float, ...]

    @property
    def mean(self) -> float:
        return statistics.fmean(self.aurocs)

    @property
    def median(self) -> float:
        return statistics.median(self.aurocs)

    def record(self) -> dict[str, str]:
        f = self.cell.fusion
        pooled = f.strategy.pooled
        return {
            "approach": f.describe(),
            "architecture": self.cell.preset,
            "fusion": f.strategy.value,
            "pooling": f.pooling.value if pooled else "-",
            "j": str(f.j) if f.strategy is Fusion.SPACE_TO_CHANNEL else "-",
            "batch_size": str(self.config.batch_size),
            "learning_rate": repr(self.config.learning_rate),
            "dropout": repr(self.config.dropout),
            "auroc": f"{self.mean:.4f}",
            "auroc_median": f"{self.median:.4f}",
            "n_seeds": str(len(self.aurocs)),
        }


def build_grid(fusions=(Fusion.LATE,), poolings=(PoolMethod.MAX,), presets=("desk",), js=(1,),
               variant: RankVariant = RankVariant.HARMONIC) -> list[AblationCell]:
    """Cartesian grid; axes that do not apply to a strategy collapse to one value."""
    cells: list[AblationCell] = []
    for preset, strategy in itertools.product(presets, fusions):
        strategy = Fusion(strategy)
        pool_axis = [PoolMethod(p) for p in poolings] if strategy.pooled else [PoolMethod.MAX]
        j_axis = list(js) if strategy is Fusion.SPACE_TO_CHANNEL else [1]
        for pooling, j in itertools.product(pool_axis, j_axis):
            cell = AblationCell(FusionConfig(strategy, pooling, variant, int(j)), preset)
            if cell not in cells:
                cells.append(cell)
    return cells


def ablate(cells: list[AblationCell], entries: list[ManifestEntry], base: TrainConfig, seeds,
           root: str | os.PathLike = ".", extractor_seed: int = 0,
           extractors: dict[str, FeatureExtractor] | None = None) -> list[AblationRow]:
    """Train and test every cell once per seed; returns one row per cell.

    ``extractors`` maps preset names to extractors and defaults to seeded
    toy extractors built from the presets.
    """
    if not cells:
        raise ValueError("ablation grid is empty")
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("ablation needs at least one seed")
    test = [e for e in entries if e.split is Split.TEST]
    test_targets = [e.label.target for e in test]
    extractors = dict(extractors or {})
    caches: dict[str, dict] = {}
    rows = []
    for cell in cells:
        if cell.preset not in extractors:
            extractors[cell.preset] = ToyExtractor.from_preset(cell.preset, seed=extractor_seed)
        cache = caches.setdefault(cell.preset, {})
        aucs = []
        for seed in seeds:
            cfg = replace(base, fusion=cell.fusion, seed=seed)
            result = train(cfg, entries, extractors[cell.preset], root, cache)
            featurizer = Featurizer(extractors[cell.preset], cell.fusion, root, cache)
            aucs.append(auroc(score_entries(result.head, featurizer, test), test_targets))
        rows.append(AblationRow(cell, replace(base, fusion=cell.fusion), tuple(aucs)))
    return rows


def write_ablation_csv(rows: list[AblationRow], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row.record())
