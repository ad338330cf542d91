"""Independent brute-force oracles and small data helpers.

The oracles deliberately use plain Python loops over pixels and
locations; they never call the vectorized engine paths they are used to
check.
"""

from __future__ import annotations

import numpy as np

from patchcert.grid import (
    ImageGrid,
    MaskGrid,
    PatchLocation,
    SegMap,
    ThreatModel,
    covers,
    enumerate_locations,
)


def random_image(rng, h, w, c=3) -> ImageGrid:
    # Sampled on the 8-bit grid so PNG round trips stay bit-exact.
    return ImageGrid.from_u8(rng.integers(0, 256, size=(h, w, c), dtype=np.uint8))


def random_segmap(rng, h, w, num_classes, ignore_label=None, p_ignore=0.0) -> SegMap:
    labels = rng.integers(0, num_classes, size=(h, w))
    if ignore_label is not None and p_ignore > 0:
        mask = rng.random((h, w)) < p_ignore
        labels = np.where(mask, ignore_label, labels)
    return SegMap(labels, num_classes, ignore_label)

# ------------------------------------------------------------------ oracles


def oracle_apply_patch(image: np.ndarray, content: np.ndarray, loc: PatchLocation):
    out = image.copy()
    for i in range(loc.top, loc.top + loc.height):
        for j in range(loc.left, loc.left + loc.width):
            out[i, j] = content[i, j]
    return out


def oracle_strength(ms, tm: ThreatModel) -> int:
    """T(M) by direct loop: for each location count masks not covering it."""
    worst = 0
    for loc in enumerate_locations(tm):
        affected = sum(1 for m in ms.masks if not covers(m, loc))
        worst = max(worst, affected)
    return worst


def oracle_detection_coverage(ms, tm: ThreatModel) -> bool:
    for loc in enumerate_locations(tm):
        if not any(covers(m, loc) for m in ms.masks):
            return False
    return True


def oracle_nearest_fill(data: np.ndarray, visible: np.ndarray, fill=0.5) -> np.ndarray:
    """Per-pixel nearest visible neighbour, ties by row-major order."""
    h, w, c = data.shape
    vis = [(i, j) for i in range(h) for j in range(w) if visible[i, j]]
    out = data.copy()
    if not vis:
        out[:] = fill
        return out
    for i in range(h):
        for j in range(w):
            if visible[i, j]:
                continue
            best = None
            best_d = None
            for (vi, vj) in vis:
                d = (vi - i) ** 2 + (vj - j) ** 2
                if best_d is None or d < best_d:
                    best_d, best = d, (vi, vj)
            out[i, j] = data[best[0], best[1]]
    return out


def oracle_vote(votes) -> tuple[int, bool]:
    """Majority label with smallest-index tie-break, plus unanimity."""
    tally = {}
    for v in votes:
        tally[int(v)] = tally.get(int(v), 0) + 1
    best_count = max(tally.values())
    label = min(c for c, n in tally.items() if n == best_count)
    return label, len(tally) == 1


class MetricsOracle:
    """Triple-loop metrics on (pred, gt, cert) label arrays."""

    def __init__(self, num_classes: int, ignore_label=None):
        self.n = num_classes
        self.ignore = ignore_label
        self.tp = [0] * num_classes
        self.fn = [0] * num_classes
        self.fp = [0] * num_classes
        self.ctp = [0] * num_classes
        self.pct_list = []
        self.presence = []  # (name, {class: (count, valid_total)})

    def add(self, name, pred, gt, cert):
        h, w = gt.shape
        valid_total = 0
        correct_certified = 0
        class_count = {}
        for i in range(h):
            for j in range(w):
                g = int(gt[i, j])
                p = int(pred[i, j])
                if self.ignore is not None and g == self.ignore:
                    continue
                valid_total += 1
                class_count[g] = class_count.get(g, 0) + 1
                if p == g:
                    self.tp[g] += 1
                    if cert[i, j]:
                        self.ctp[g] += 1
                        correct_certified += 1
                else:
                    self.fn[g] += 1
                    self.fp[p] += 1
        self.pct_list.append((name, correct_certified / valid_total))
        self.presence.append((name, {c: (n, valid_total) for c, n in class_count.items()}))

    def global_accuracy_one(self, pred, gt):
        agree = valid = 0
        h, w = gt.shape
        for i in range(h):
            for j in range(w):
                if self.ignore is not None and int(gt[i, j]) == self.ignore:
                    continue
                valid += 1
                if int(pred[i, j]) == int(gt[i, j]):
                    agree += 1
        return agree / valid

    def miou(self):
        vals = []
        for c in range(self.n):
            denom = self.tp[c] + self.fn[c] + self.fp[c]
            if denom > 0:
                vals.append(self.tp[c] / denom)
        return sum(vals) / len(vals)

    def mean_recall(self, subset):
        rs = [self.tp[c] / (self.tp[c] + self.fn[c]) for c in sorted(subset)]
        crs = [self.ctp[c] / (self.tp[c] + self.fn[c]) for c in sorted(subset)]
        return sum(rs) / len(rs), sum(crs) / len(crs)

    def pct_certified(self):
        vals = [v for _, v in sorted(self.pct_list)]
        return sum(vals) / len(vals)

    def presence_fractions(self):
        sums = {}
        counts = {}
        for _, per_class in sorted(self.presence):
            for c, (n, total) in per_class.items():
                sums[c] = sums.get(c, 0.0) + n / total
                counts[c] = counts.get(c, 0) + 1
        return {c: sums[c] / counts[c] for c in sums}


def checkerboard_mask(h, w) -> MaskGrid:
    yy, xx = np.mgrid[0:h, 0:w]
    return MaskGrid((yy + xx) % 2 == 0)
