"""ROC curves and the area under them.

The area comes from a threshold sweep with trapezoidal integration. Tied
scores share one threshold step, so a tie counts as half a concordant pair,
which is exactly the Mann-Whitney statistic. The trapezoid sum is accumulated
in integers and divided once, so the sweep reproduces the all-pairs count
bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .errors import DegenerateLabels, LengthMismatch


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise LengthMismatch(f"{s.size} scores but {y.size} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    y = y.astype(np.int64)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise DegenerateLabels(f"need at least one positive and one negative, got {n_pos} of {y.size} positive")
    return s, y


def _sweep(s: np.ndarray, y: np.ndarray):
    """Distinct thresholds (descending) with cumulative TP and FP counts."""
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_block = np.flatnonzero(np.diff(s) != 0)
    ends = np.concatenate([last_of_block, [s.size - 1]])
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    return s[ends], tp, fp


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(thresholds, fpr, tpr)``; the first point is ``(0, 0)`` at threshold +inf.

    A sample is called positive when its score is ``>= threshold``.
    """
    s, y = _check(scores, labels)
    thr, tp, fp = _sweep(s, y)
    n_pos, n_neg = int(y.sum()), int(y.size - y.sum())
    thresholds = np.concatenate([[np.inf], thr])
    fpr = np.concatenate([[0.0], fp / n_neg])
    tpr = np.concatenate([[0.0], tp / n_pos])
    return thresholds, fpr, tpr


def auroc(scores, labels) -> float:
    s, y = _check(scores, labels)
    _, tp, fp = _sweep(s, y)
    n_pos, n_neg = int(y.sum()), int(y.size - y.sum())
    tp = np.concatenate([[0], tp])
    fp = np.concatenate([[0], fp])
    # twice the trapezoid area, in units of one pos/neg pair
    doubled = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return doubled / (2 * n_pos * n_neg)


def trapezoid_area(fpr, tpr) -> float:
    fpr, tpr = np.asarray(fpr, dtype=np.float64), np.asarray(tpr, dtype=np.float64)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass
class EvalReport:
    scores: np.ndarray
    labels: np.ndarray
    volume_ids: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.thresholds, self.fpr, self.tpr = roc_curve(self.scores, self.labels)
        self.auroc = auroc(self.scores, self.labels)

    @property
    def roc_points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def write(self, out_dir: str | os.PathLike) -> None:
        """Write ``roc.csv``, ``scores.csv`` and ``report.json`` into ``out_dir``."""
        os.makedirs(out_dir, exist_ok=True)
        write_roc_csv(self.thresholds, self.fpr, self.tpr, os.path.join(out_dir, "roc.csv"))
        with open(os.path.join(out_dir, "scores.csv"), "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["volume_id", "label", "score"])
            ids = self.volume_ids or [str(i) for i in range(self.scores.size)]
            for vid, lab, sc in zip(ids, self.labels.tolist(), self.scores.tolist()):
                w.writerow([vid, lab, repr(sc)])
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as f:
            json.dump({"auroc": self.auroc, "n": int(self.scores.size), "n_positive": int(self.labels.sum()),
                       "config": self.config}, f, indent=2, sort_keys=True)
            f.write("\n")


def write_roc_csv(thresholds, fpr, tpr, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, x, y in zip(thresholds, fpr, tpr):
            w.writerow(["inf" if math.isinf(t) else repr(float(t)), repr(float(x)), repr(float(y))])


def read_roc_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["threshold", "fpr", "tpr"]:
            raise ValueError(f"{path}: expected header threshold,fpr,tpr")
        rows = [(float(r["threshold"]), float(r["fpr"]), float(r["tpr"])) for r in reader]
    if not rows:
        raise ValueError(f"{path}: no ROC points")
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1], arr[:, 2]


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def roc_svg(series: list[tuple[str, np.ndarray, np.ndarray]], title: str = "ROC") -> str:
    """Plain SVG overlay of ROC curves on the unit square, one polyline per series."""
    size, margin = 400, 50
    span = size - 2 * margin

    def px(x, y):
        return margin + x * span, size - margin - y * span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<text x="{size / 2}" y="25" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        '<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>'.format(*px(0, 0), *px(1, 1)),
        f'<text x="{size / 2}" y="{size - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">False positive rate</text>',
        f'<text x="14" y="{size / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 14 {size / 2})">True positive rate</text>',
    ]
    for tick in (0.0, 0.5, 1.0):
        x, y = px(tick, 0)
        parts.append(f'<text x="{x:.1f}" y="{y + 15:.1f}" text-anchor="middle" font-family="sans-serif" font-size="10">{tick:g}</text>')
        x, y = px(0, tick)
        parts.append(f'<text x="{x - 5:.1f}" y="{y + 4:.1f}" text-anchor="end" font-family="sans-serif" font-size="10">{tick:g}</text>')
    for i, (label, fpr, tpr) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join("{:.2f},{:.2f}".format(*px(float(x), float(y))) for x, y in zip(fpr, tpr))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"><title>{escape(label)}</title></polyline>')
        lx, ly = px(0.55, 0.05 + 0.07 * (len(series) - 1 - i))
        parts.append(f'<line x1="{lx:.1f}" y1="{ly - 4:.1f}" x2="{lx + 20:.1f}" y2="{ly - 4:.1f}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 25:.1f}" y="{ly:.1f}" font-family="sans-serif" font-size="11">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
