"""Segmentation quality and certification metrics.

Counts are integers accumulated per class; every ratio is taken only at
report time, so aggregates can be merged in any order without changing the
result. Pixels carrying the ignore label are excluded from every count.

Certified counts (cTP) are the guaranteed lower bounds: pixels that are
certified *and* carry the correct class. Certified recall cR = cTP / P can
therefore never exceed recall R = TP / P.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .certify import CertifiedOutput
from .errors import DimensionMismatchError, GeometryError, MetricsError
from .grid import SegMap


def _valid_mask(gt: SegMap, ignore_label: int | None) -> np.ndarray:
    if ignore_label is None:
        ignore_label = gt.ignore_label
    if ignore_label is None:
        return np.ones(gt.labels.shape, dtype=bool)
    return gt.labels != ignore_label


def _check_pair(pred: SegMap, gt: SegMap) -> None:
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise DimensionMismatchError(
            f"prediction {pred.height}x{pred.width} vs ground truth {gt.height}x{gt.width}"
        )


def accuracy_map(pred: SegMap, gt: SegMap) -> np.ndarray:
    """1 where the labels agree, 0 elsewhere."""
    _check_pair(pred, gt)
    return (pred.labels == gt.labels).astype(np.uint8)


def global_accuracy(pred: SegMap, gt: SegMap, ignore_label: int | None = None) -> float:
    """Mean of the accuracy map over non-ignored pixels."""
    _check_pair(pred, gt)
    valid = _valid_mask(gt, ignore_label)
    total = int(valid.sum())
    if total == 0:
        raise MetricsError("no valid pixels (everything ignored)")
    agree = int(((pred.labels == gt.labels) & valid).sum())
    return agree / total


@dataclass
class ClassStats:
    """Per-class pixel counts: TP, FN, FP, certified TP, and P = TP + FN."""

    tp: np.ndarray
    fn: np.ndarray
    fp: np.ndarray
    ctp: np.ndarray
    num_classes: int

    @classmethod
    def zeros(cls, num_classes: int) -> "ClassStats":
        z = lambda: np.zeros(num_classes, dtype=np.int64)  # noqa: E731
        return cls(z(), z(), z(), z(), num_classes)

    @property
    def p(self) -> np.ndarray:
        return self.tp + self.fn

    def __add__(self, other: "ClassStats") -> "ClassStats":
        if self.num_classes != other.num_classes:
            raise DimensionMismatchError("cannot merge stats with different class counts")
        return ClassStats(
            self.tp + other.tp,
            self.fn + other.fn,
            self.fp + other.fp,
            self.ctp + other.ctp,
            self.num_classes,
        )

    def check(self) -> None:
        if (self.ctp > self.tp).any():
            raise MetricsError("cTP exceeded TP")
        if (self.tp < 0).any() or (self.fn < 0).any() or (self.fp < 0).any():
            raise MetricsError("negative count")


def confusion_counts(
    pred: SegMap, gt: SegMap, num_classes: int | None = None,
    ignore_label: int | None = None,
) -> ClassStats:
    """Pixel-level per-class TP / FN / FP (cTP stays zero here)."""
    _check_pair(pred, gt)
    n = num_classes or gt.num_classes
    valid = _valid_mask(gt, ignore_label)
    p, g = pred.labels[valid], gt.labels[valid]
    if p.size and (p.max() >= n or p.min() < 0 or g.max() >= n or g.min() < 0):
        raise GeometryError(f"labels outside [0, {n})")
    cm = np.bincount(g * n + p, minlength=n * n).reshape(n, n)
    stats = ClassStats.zeros(n)
    diag = np.diag(cm).astype(np.int64)
    stats.tp += diag
    stats.fn += cm.sum(axis=1) - diag
    stats.fp += cm.sum(axis=0) - diag
    return stats


def miou(stats: ClassStats) -> float:
    """Mean IoU over classes that occur in either prediction or truth."""
    denom = stats.tp + stats.fn + stats.fp
    evaluable = np.flatnonzero(denom > 0)
    if evaluable.size == 0:
        raise MetricsError("no evaluable class for mIoU")
    ious = [int(stats.tp[c]) / int(denom[c]) for c in evaluable]
    return sum(ious) / len(ious)


def certified_recall(
    cert_output: CertifiedOutput, gt: SegMap, ignore_label: int | None = None
) -> ClassStats:
    """Confusion counts of the certified output, with cTP = pixels that are
    certified and correctly classified."""
    pred = cert_output.segmentation
    _check_pair(pred, gt)
    stats = confusion_counts(pred, gt, gt.num_classes, ignore_label)
    valid = _valid_mask(gt, ignore_label)
    hit = cert_output.cert_map & (pred.labels == gt.labels) & valid
    stats.ctp += np.bincount(gt.labels[hit], minlength=stats.num_classes).astype(np.int64)
    stats.check()
    return stats


def percent_certified_correct(
    cert_output: CertifiedOutput, gt: SegMap, ignore_label: int | None = None
) -> float:
    """Fraction of (non-ignored) pixels that are certified and correct."""
    pred = cert_output.segmentation
    _check_pair(pred, gt)
    valid = _valid_mask(gt, ignore_label)
    total = int(valid.sum())
    if total == 0:
        raise MetricsError("no valid pixels (everything ignored)")
    good = int((cert_output.cert_map & (pred.labels == gt.labels) & valid).sum())
    return good / total


def mean_recall(stats: ClassStats, class_subset) -> tuple[float, float]:
    """Dataset-pooled mean recall and certified mean recall over a class
    subset; every class in the subset must have ground-truth pixels."""
    subset = sorted(int(c) for c in class_subset)
    if not subset:
        raise MetricsError("empty class subset")
    p = stats.p
    for c in subset:
        if c < 0 or c >= stats.num_classes:
            raise MetricsError(f"class {c} out of range")
        if p[c] == 0:
            raise MetricsError(f"class {c} has no ground-truth pixels")
    recalls = [int(stats.tp[c]) / int(p[c]) for c in subset]
    crecalls = [int(stats.ctp[c]) / int(p[c]) for c in subset]
    return sum(recalls) / len(recalls), sum(crecalls) / len(crecalls)


def select_big_classes(presence_stats, threshold: float = 0.20) -> list[int]:
    """Classes whose mean occupied fraction, over the images in which they
    appear, strictly exceeds the threshold.

    ``presence_stats`` maps class -> mean fraction (dict or array; NaN or
    missing = never present).
    """
    if isinstance(presence_stats, dict):
        items = presence_stats.items()
    else:
        items = enumerate(presence_stats)
    return sorted(
        int(c) for c, frac in items if frac is not None and not np.isnan(frac) and frac > threshold
    )


@dataclass
class DatasetAggregate:
    """Per-class counts plus per-image fractions, merged associatively.

    Per-image values are keyed by image name, so the final report does not
    depend on the order in which images were added or aggregates merged.
    """

    num_classes: int
    ignore_label: int | None = None
    stats: ClassStats = None
    per_image_pct: dict = field(default_factory=dict)
    presence: dict = field(default_factory=dict)  # name -> {class: (pixels, valid)}

    def __post_init__(self):
        if self.stats is None:
            self.stats = ClassStats.zeros(self.num_classes)

    @property
    def num_images(self) -> int:
        return len(self.per_image_pct)

    def add_image(self, name: str, cert_output: CertifiedOutput, gt: SegMap) -> None:
        if name in self.per_image_pct:
            raise MetricsError(f"duplicate image name {name!r}")
        self.stats = self.stats + certified_recall(cert_output, gt, self.ignore_label)
        self.per_image_pct[name] = percent_certified_correct(
            cert_output, gt, self.ignore_label
        )
        valid = _valid_mask(gt, self.ignore_label)
        total = int(valid.sum())
        counts = np.bincount(gt.labels[valid], minlength=self.num_classes)
        self.presence[name] = {
            int(c): (int(counts[c]), total) for c in np.flatnonzero(counts)
        }

    def merge(self, other: "DatasetAggregate") -> "DatasetAggregate":
        if self.num_classes != other.num_classes:
            raise DimensionMismatchError("cannot merge aggregates with different classes")
        if set(self.per_image_pct) & set(other.per_image_pct):
            raise MetricsError("aggregates share image names")
        merged = DatasetAggregate(self.num_classes, self.ignore_label)
        merged.stats = self.stats + other.stats
        merged.per_image_pct = {**self.per_image_pct, **other.per_image_pct}
        merged.presence = {**self.presence, **other.presence}
        return merged

    def pct_certified_correct(self) -> float:
        """Unweighted mean of the per-image certified-and-correct fractions."""
        if not self.per_image_pct:
            raise MetricsError("aggregate holds no images")
        vals = [self.per_image_pct[k] for k in sorted(self.per_image_pct)]
        return sum(vals) / len(vals)

    def presence_fractions(self) -> np.ndarray:
        """Mean fraction each class occupies in the images where it appears
        (NaN for classes never present)."""
        out = np.full(self.num_classes, np.nan)
        sums = np.zeros(self.num_classes)
        counts = np.zeros(self.num_classes, dtype=np.int64)
        for name in sorted(self.presence):
            for c, (pixels, total) in self.presence[name].items():
                sums[c] += pixels / total
                counts[c] += 1
        present = counts > 0
        out[present] = sums[present] / counts[present]
        return out

    def report(self, big_threshold: float = 0.20) -> dict:
        """The eval.json payload: per-class counts/ratios plus dataset rows."""
        p = self.stats.p
        evaluable = [c for c in range(self.num_classes) if p[c] > 0]
        if not evaluable:
            raise MetricsError("no class has ground-truth pixels")
        mr, cmr = mean_recall(self.stats, evaluable)
        presence = self.presence_fractions()
        big = select_big_classes(presence, big_threshold)
        big_evaluable = [c for c in big if p[c] > 0]
        big_row = None
        if big_evaluable:
            bmr, bcmr = mean_recall(self.stats, big_evaluable)
            big_row = {"mean_recall": bmr, "certified_mean_recall": bcmr}
        denom = self.stats.tp + self.stats.fn + self.stats.fp
        per_class = []
        for c in range(self.num_classes):
            row = {
                "class": c,
                "tp": int(self.stats.tp[c]),
                "fn": int(self.stats.fn[c]),
                "fp": int(self.stats.fp[c]),
                "ctp": int(self.stats.ctp[c]),
                "p": int(p[c]),
                "recall": int(self.stats.tp[c]) / int(p[c]) if p[c] > 0 else None,
                "certified_recall": int(self.stats.ctp[c]) / int(p[c]) if p[c] > 0 else None,
                "iou": int(self.stats.tp[c]) / int(denom[c]) if denom[c] > 0 else None,
                "presence_mean_fraction": (
                    None if np.isnan(presence[c]) else float(presence[c])
                ),
            }
            per_class.append(row)
        return {
            "num_classes": self.num_classes,
            "num_images": self.num_images,
            "ignore_label": self.ignore_label,
            "per_class": per_class,
            "dataset": {
                "miou": miou(self.stats),
                "mean_recall": mr,
                "certified_mean_recall": cmr,
                "pct_certified_correct": self.pct_certified_correct(),
            },
            "big_classes": {
                "threshold": big_threshold,
                "classes": big,
                **(big_row or {"mean_recall": None, "certified_mean_recall": None}),
            },
        }
