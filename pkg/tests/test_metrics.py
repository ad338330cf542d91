"""Metrics against an independent triple-loop oracle, plus the frozen
boundary cases."""

import numpy as np
import pytest

from oracles import MetricsOracle, random_segmap
from patchcert.certify import CertifiedOutput
from patchcert.errors import GeometryError, MetricsError
from patchcert.grid import SegMap
from patchcert.metrics import (
    ClassStats,
    DatasetAggregate,
    accuracy_map,
    certified_recall,
    confusion_counts,
    global_accuracy,
    mean_recall,
    miou,
    percent_certified_correct,
    select_big_classes,
)


def cert_output(pred: SegMap, cert: np.ndarray) -> CertifiedOutput:
    return CertifiedOutput(pred, cert, "recovery")


class TestAccuracy:
    def test_identical_maps(self, rng):
        seg = random_segmap(rng, 4, 4, 3)
        assert accuracy_map(seg, seg).all()
        assert global_accuracy(seg, seg) == 1.0

    def test_disjoint_labels(self):
        a = SegMap(np.zeros((3, 3), dtype=int), 2)
        b = SegMap(np.ones((3, 3), dtype=int), 2)
        assert not accuracy_map(a, b).any()
        assert global_accuracy(a, b) == 0.0

    def test_one_wrong_pixel(self):
        gt = SegMap(np.zeros((2, 2), dtype=int), 2)
        pred_labels = np.zeros((2, 2), dtype=int)
        pred_labels[0, 1] = 1
        assert global_accuracy(SegMap(pred_labels, 2), gt) == 0.75

    def test_symmetric_and_bounded(self, rng):
        a = random_segmap(rng, 8, 8, 4)
        b = random_segmap(rng, 8, 8, 4)
        acc = global_accuracy(a, b)
        assert acc == global_accuracy(b, a)
        assert 0.0 <= acc <= 1.0

    def test_random_matches_count_oracle(self, rng):
        a = random_segmap(rng, 8, 8, 4)
        b = random_segmap(rng, 8, 8, 4)
        agree = sum(
            int(a.labels[i, j] == b.labels[i, j]) for i in range(8) for j in range(8)
        )
        assert global_accuracy(a, b) == agree / 64


class TestConfusion:
    def test_identical_maps(self, rng):
        seg = random_segmap(rng, 6, 6, 4)
        stats = confusion_counts(seg, seg, 4)
        assert (stats.fn == 0).all() and (stats.fp == 0).all()
        assert (stats.tp == stats.p).all()

    def test_all_pred_class_zero(self, rng):
        gt = random_segmap(rng, 6, 6, 3)
        pred = SegMap(np.zeros((6, 6), dtype=int), 3)
        stats = confusion_counts(pred, gt, 3)
        assert stats.fp[0] == int((gt.labels != 0).sum())
        assert stats.fp[1] == 0 and stats.fp[2] == 0

    def test_empty_class_excluded_from_means(self):
        gt = SegMap(np.zeros((4, 4), dtype=int), 3)
        pred = SegMap(np.zeros((4, 4), dtype=int), 3)
        stats = confusion_counts(pred, gt, 3)
        assert stats.p[1] == 0 and stats.p[2] == 0
        with pytest.raises(MetricsError):
            mean_recall(stats, [1])

    def test_label_out_of_range(self):
        gt = SegMap(np.zeros((2, 2), dtype=int), 4)
        pred = SegMap(np.full((2, 2), 3), 4)
        with pytest.raises(GeometryError):
            confusion_counts(pred, gt, 2)


class TestMiou:
    def test_perfect(self, rng):
        seg = random_segmap(rng, 6, 6, 3)
        assert miou(confusion_counts(seg, seg, 3)) == 1.0

    def test_half_overlap(self):
        stats = ClassStats.zeros(1)
        stats.tp[0], stats.fn[0], stats.fp[0] = 2, 1, 1
        assert miou(stats) == 0.5

    def test_no_evaluable_class(self):
        with pytest.raises(MetricsError):
            miou(ClassStats.zeros(3))


class TestCertifiedRecall:
    def test_fully_certified_correct(self, rng):
        gt = random_segmap(rng, 5, 5, 3)
        out = cert_output(gt, np.ones((5, 5), dtype=bool))
        stats = certified_recall(out, gt)
        assert (stats.ctp == stats.tp).all()

    def test_nothing_certified(self, rng):
        gt = random_segmap(rng, 5, 5, 3)
        out = cert_output(gt, np.zeros((5, 5), dtype=bool))
        assert (certified_recall(out, gt).ctp == 0).all()

    def test_certified_bound_always_holds(self, rng):
        for _ in range(20):
            gt = random_segmap(rng, 6, 6, 4)
            pred = random_segmap(rng, 6, 6, 4)
            cert = rng.random((6, 6)) < 0.5
            stats = certified_recall(cert_output(pred, cert), gt)
            assert (stats.ctp <= stats.tp).all()


class TestPercentCertified:
    def test_extremes(self, rng):
        gt = random_segmap(rng, 4, 4, 3)
        assert percent_certified_correct(cert_output(gt, np.ones((4, 4), bool)), gt) == 1.0
        assert percent_certified_correct(cert_output(gt, np.zeros((4, 4), bool)), gt) == 0.0

    def test_half(self):
        gt = SegMap(np.zeros((2, 2), dtype=int), 2)
        cert = np.array([[True, True], [False, False]])
        assert percent_certified_correct(cert_output(gt, cert), gt) == 0.5


class TestMeanRecall:
    def test_perfect_dataset(self, rng):
        gt = random_segmap(rng, 8, 8, 3)
        stats = certified_recall(cert_output(gt, np.ones((8, 8), bool)), gt)
        present = [c for c in range(3) if stats.p[c] > 0]
        mr, cmr = mean_recall(stats, present)
        assert mr == 1.0 and cmr == 1.0

    def test_two_class_average(self):
        stats = ClassStats.zeros(2)
        stats.tp[:] = (4, 2)
        stats.fn[:] = (0, 2)
        mr, _ = mean_recall(stats, [0, 1])
        assert mr == 0.75

    def test_empty_subset(self):
        with pytest.raises(MetricsError):
            mean_recall(ClassStats.zeros(2), [])


class TestBigClasses:
    def test_mean_over_presence(self):
        # present in two images at 30% and 20% -> mean 25% -> selected
        assert select_big_classes({0: 0.25, 1: 0.05}) == [0]

    def test_boundary_strictly_greater(self):
        assert select_big_classes({0: 0.20}) == []
        assert select_big_classes({0: 0.2010}) == [0]

    def test_array_input_with_nan(self):
        stats = np.array([0.5, np.nan, 0.1])
        assert select_big_classes(stats) == [0]


class TestOracleEquivalence:
    """The vectorized metrics must match the naive triple-loop oracle
    exactly, including ignore-label handling."""

    def run_trial(self, rng, ignore):
        n = int(rng.integers(2, 9))
        h, w = int(rng.integers(2, 17)), int(rng.integers(2, 17))
        images = []
        for _ in range(int(rng.integers(1, 4))):
            gt = random_segmap(rng, h, w, n, ignore_label=ignore,
                               p_ignore=0.15 if ignore else 0.0)
            if ignore is not None and not (gt.labels != ignore).any():
                continue  # fully ignored image is rejected by the engine
            pred = random_segmap(rng, h, w, n)
            cert = rng.random((h, w)) < 0.5
            images.append((gt, pred, cert))
        if not images:
            return
        agg = DatasetAggregate(n, ignore)
        oracle = MetricsOracle(n, ignore)
        for i, (gt, pred, cert) in enumerate(images):
            out = cert_output(pred, cert)
            agg.add_image(f"img{i}", out, gt)
            oracle.add(f"img{i}", pred.labels, gt.labels, cert)
            assert global_accuracy(pred, gt, ignore) == oracle.global_accuracy_one(
                pred.labels, gt.labels
            )
        assert agg.stats.tp.tolist() == oracle.tp
        assert agg.stats.fn.tolist() == oracle.fn
        assert agg.stats.fp.tolist() == oracle.fp
        assert agg.stats.ctp.tolist() == oracle.ctp
        assert miou(agg.stats) == oracle.miou()
        present = [c for c in range(n) if agg.stats.p[c] > 0]
        if present:
            assert mean_recall(agg.stats, present) == oracle.mean_recall(present)
        assert agg.pct_certified_correct() == oracle.pct_certified()
        engine_presence = agg.presence_fractions()
        oracle_presence = oracle.presence_fractions()
        for c in range(n):
            if c in oracle_presence:
                assert engine_presence[c] == oracle_presence[c]
            else:
                assert np.isnan(engine_presence[c])

    def test_many_random_trials(self, rng):
        for trial in range(60):
            self.run_trial(rng, ignore=255 if trial % 3 == 0 else None)

    def test_merge_is_order_independent(self, rng):
        n = 4
        parts = []
        for i in range(3):
            agg = DatasetAggregate(n)
            gt = random_segmap(rng, 8, 8, n)
            pred = random_segmap(rng, 8, 8, n)
            agg.add_image(f"img{i}", cert_output(pred, rng.random((8, 8)) < 0.5), gt)
            parts.append(agg)
        forward = parts[0].merge(parts[1]).merge(parts[2])
        backward = parts[2].merge(parts[0].merge(parts[1]))
        assert forward.report() == backward.report()


class TestMiouBound:
    def test_miou_below_mean_precision_and_recall(self, rng):
        """IoU <= min(precision, recall) per class, hence in the mean over
        any common class subset."""
        for _ in range(20):
            n = int(rng.integers(2, 6))
            gt = random_segmap(rng, 10, 10, n)
            pred = random_segmap(rng, 10, 10, n)
            stats = confusion_counts(pred, gt, n)
            subset = [
                c for c in range(n)
                if stats.p[c] > 0 and stats.tp[c] + stats.fp[c] > 0
            ]
            if not subset:
                continue
            ious = [int(stats.tp[c]) / int(stats.tp[c] + stats.fn[c] + stats.fp[c])
                    for c in subset]
            recalls = [int(stats.tp[c]) / int(stats.p[c]) for c in subset]
            precisions = [int(stats.tp[c]) / int(stats.tp[c] + stats.fp[c])
                          for c in subset]
            mean = lambda xs: sum(xs) / len(xs)  # noqa: E731
            assert mean(ious) <= mean(recalls) + 1e-12
            assert mean(ious) <= mean(precisions) + 1e-12


class TestReport:
    def test_report_shape(self, rng):
        agg = DatasetAggregate(3)
        gt = random_segmap(rng, 8, 8, 3)
        agg.add_image("a", cert_output(gt, np.ones((8, 8), bool)), gt)
        report = agg.report(big_threshold=0.2)
        assert report["dataset"]["miou"] == 1.0
        assert report["dataset"]["pct_certified_correct"] == 1.0
        assert len(report["per_class"]) == 3
        assert report["big_classes"]["threshold"] == 0.2

    def test_duplicate_image_rejected(self, rng):
        agg = DatasetAggregate(3)
        gt = random_segmap(rng, 4, 4, 3)
        out = cert_output(gt, np.ones((4, 4), bool))
        agg.add_image("a", out, gt)
        with pytest.raises(MetricsError):
            agg.add_image("a", out, gt)
