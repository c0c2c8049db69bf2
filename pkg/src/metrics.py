"""
metrics.py - macro-F1 (the task's headline metric) and cross-validation aggregates.
"""
import numpy as np
from sklearn.metrics import confusion_matrix as sk_confusion_matrix
from sklearn.metrics import f1_score, recall_score

from artifacts import PipelineError
from config import LABEL_NAMES, NUM_CLASSES


class MetricsError(PipelineError):
    pass


def _check(truths, preds, k):
    if len(truths) != len(preds):
        raise MetricsError(f"length mismatch: {len(truths)} truths vs {len(preds)} predictions")
    bad = sorted({int(v) for v in list(truths) + list(preds) if not 0 <= int(v) < k})
    if bad:
        raise MetricsError(f"labels {bad} are outside [0, {k})")


def confusion_matrix(truths, preds, k=NUM_CLASSES):
    """K x K counts, rows = true label, columns = predicted label."""
    _check(truths, preds, k)
    if len(truths) == 0:
        return np.zeros((k, k), dtype=int)
    return sk_confusion_matrix(truths, preds, labels=list(range(k)))


def per_class_f1(truths, preds, k=NUM_CLASSES):
    _check(truths, preds, k)
    if len(truths) == 0:
        return np.zeros(k)
    return f1_score(truths, preds, labels=list(range(k)), average=None, zero_division=0)


def per_class_recall(truths, preds, k=NUM_CLASSES):
    _check(truths, preds, k)
    if len(truths) == 0:
        return np.zeros(k)
    return recall_score(truths, preds, labels=list(range(k)), average=None, zero_division=0)


def macro_f1(truths, preds, k=NUM_CLASSES):
    """Unweighted mean of per-class F1; undefined precision/recall count as 0."""
    return float(np.mean(per_class_f1(truths, preds, k)))


def cv_mean(fold_scores):
    scores = list(fold_scores)
    if not scores:
        raise MetricsError("cannot average an empty list of fold scores")
    return float(np.mean(scores))


def metrics_report(truths, preds, per_fold=None, k=NUM_CLASSES):
    """JSON-able report: per-fold scores, their mean, per-class F1 and the confusion matrix."""
    per_fold = [float(s) for s in (per_fold or [])]
    f1s = per_class_f1(truths, preds, k)
    return {
        "per_fold": per_fold,
        "mean": cv_mean(per_fold) if per_fold else macro_f1(truths, preds, k),
        "macro_f1": float(np.mean(f1s)),
        "per_class_f1": {LABEL_NAMES.get(c, str(c)): float(f1s[c]) for c in range(k)},
        "per_class_recall": {
            LABEL_NAMES.get(c, str(c)): float(r) for c, r in enumerate(per_class_recall(truths, preds, k))
        },
        "confusion_matrix": confusion_matrix(truths, preds, k).tolist(),
        "n": len(truths),
    }
