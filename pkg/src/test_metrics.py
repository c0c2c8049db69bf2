"""
Tests for macro-F1 and the metrics report.
"""
from fractions import Fraction

import numpy as np
import pytest

from metrics import MetricsError, confusion_matrix, cv_mean, macro_f1, metrics_report, per_class_recall


def brute_macro_f1(truths, preds, k=3):
    total = Fraction(0)
    for c in range(k):
        tp = sum(1 for t, p in zip(truths, preds) if t == c and p == c)
        fp = sum(1 for t, p in zip(truths, preds) if t != c and p == c)
        fn = sum(1 for t, p in zip(truths, preds) if t == c and p != c)
        precision = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        recall = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        if precision + recall:
            total += 2 * precision * recall / (precision + recall)
    return float(total / k)


def test_matches_brute_force_on_1000_instances():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        truths = rng.integers(0, 3, size=n).tolist()
        preds = rng.integers(0, 3, size=n).tolist()
        assert macro_f1(truths, preds) == pytest.approx(brute_macro_f1(truths, preds), abs=1e-12)


def test_all_moderate_on_dev_counts():
    truths = [0] * 848 + [1] * 2169 + [2] * 228
    preds = [1] * len(truths)
    assert macro_f1(truths, preds) == pytest.approx(0.2671, abs=1e-3)


def test_perfect_and_empty_cases():
    assert macro_f1([0, 1, 2], [0, 1, 2]) == 1.0
    # classes absent from both truths and predictions score 0
    assert macro_f1([1, 1], [1, 1]) == pytest.approx(1 / 3)
    assert macro_f1([], []) == 0.0


def test_input_errors():
    with pytest.raises(MetricsError, match="length mismatch"):
        macro_f1([0, 1], [0])
    with pytest.raises(MetricsError, match="outside"):
        macro_f1([0, 3], [0, 1])
    with pytest.raises(MetricsError):
        cv_mean([])


def test_cv_mean():
    assert cv_mean([0.60, 0.62, 0.61, 0.63]) == pytest.approx(0.615)


def test_confusion_matrix_and_recall():
    cm = confusion_matrix([0, 0, 1, 2, 2], [0, 1, 1, 2, 0])
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 1]]
    assert per_class_recall([0, 0, 1, 2, 2], [0, 1, 1, 2, 0]).tolist() == [0.5, 1.0, 0.5]


def test_report_layout():
    report = metrics_report([0, 1, 2, 1], [0, 1, 1, 1], per_fold=[0.5, 0.7])
    assert report["per_fold"] == [0.5, 0.7]
    assert report["mean"] == pytest.approx(0.6)
    assert set(report["per_class_f1"]) == {"not depression", "moderate", "severe"}
    assert report["per_class_recall"]["severe"] == 0.0
    assert report["n"] == 4
