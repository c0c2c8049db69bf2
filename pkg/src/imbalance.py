"""
imbalance.py - strategies for the unbalanced label distribution:
do nothing, undersample, oversample, or weight the loss per class.
"""
import logging

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import log_softmax, softmax

from artifacts import PipelineError
from config import IMBALANCE_STRATEGIES
from dataset import Dataset, label_counts

logger = logging.getLogger(__name__)


class ImbalanceError(PipelineError):
    pass


# ---------------------------
# Class weights
# ---------------------------
class ClassWeights(dict):
    """label -> positive weight, w_c = N / (K * n_c)."""

    def as_tensor(self, num_classes=None):
        num_classes = num_classes or len(self)
        return torch.tensor([self[c] for c in range(num_classes)], dtype=torch.float64)


def compute_class_weights(counts):
    if not counts:
        raise ImbalanceError("no class counts given")
    zero = sorted(label for label, n in counts.items() if n <= 0)
    if zero:
        raise ImbalanceError(f"class(es) {zero} have zero examples; weights are undefined")
    total = sum(counts.values())
    k = len(counts)
    return ClassWeights({label: total / (k * n) for label, n in counts.items()})


def uniform_weights(num_classes):
    return ClassWeights({label: 1.0 for label in range(num_classes)})


# ---------------------------
# Resampling
# ---------------------------
def _by_label(dataset):
    groups = {}
    for index, ex in enumerate(dataset):
        groups.setdefault(ex.label, []).append(index)
    return groups


def undersample(dataset, seed):
    """Keep min-class-count rows of every class, chosen uniformly; original order kept."""
    groups = _by_label(dataset)
    if not groups:
        return dataset
    target = min(len(indices) for indices in groups.values())
    rng = np.random.default_rng(seed)
    keep = []
    for label in sorted(groups):
        indices = groups[label]
        chosen = rng.choice(len(indices), size=target, replace=False)
        keep.extend(indices[i] for i in chosen)
    keep.sort()
    return dataset.subset(keep)


def oversample(dataset, seed):
    """
    Replicate whole rows until every class reaches the max class count.
    Replicas get an `#r<n>` id suffix so ids stay unique.
    """
    groups = _by_label(dataset)
    if not groups:
        return dataset
    target = max(len(indices) for indices in groups.values())
    rng = np.random.default_rng(seed)
    extra = []
    for label in sorted(groups):
        indices = groups[label]
        need = target - len(indices)
        if need <= 0:
            continue
        # full copies first, then a random remainder without replacement
        copies, remainder = divmod(need, len(indices))
        picks = list(indices) * copies
        picks.extend(indices[i] for i in sorted(rng.choice(len(indices), size=remainder, replace=False)))
        extra.extend(picks)

    examples = list(dataset.examples)
    replica_no = {}
    for index in extra:
        ex = dataset.examples[index]
        replica_no[ex.id] = replica_no.get(ex.id, 0) + 1
        examples.append(type(ex)(f"{ex.id}#r{replica_no[ex.id]}", ex.text, ex.label))
    return Dataset(tuple(examples), dataset.split_tag)


def apply_strategy(dataset, strategy, seed):
    """(training set, class weights or None) for one of the four strategies."""
    if strategy not in IMBALANCE_STRATEGIES:
        raise ImbalanceError(f"unknown imbalance strategy {strategy!r}; use one of {', '.join(IMBALANCE_STRATEGIES)}")
    if strategy == "undersample":
        return undersample(dataset, seed), None
    if strategy == "oversample":
        return oversample(dataset, seed), None
    if strategy == "weights":
        counts = {label: n for label, n in label_counts(dataset).items()}
        return dataset, compute_class_weights(counts)
    return dataset, None


# ---------------------------
# Weighted cross-entropy
# ---------------------------
def _check_logits(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ImbalanceError(f"non-finite logits: {logits.tolist()}")
    return logits


def weighted_cross_entropy(logits, true_label, weights):
    """w_y * -log softmax(logits)[y]."""
    logits = _check_logits(logits)
    return float(weights[true_label] * -log_softmax(logits)[true_label])


def weighted_cross_entropy_grad(logits, true_label, weights):
    """d loss / d logits = w_y * (softmax(logits) - onehot(y))."""
    logits = _check_logits(logits)
    grad = softmax(logits)
    grad[true_label] -= 1.0
    return weights[true_label] * grad


def weighted_ce_loss(logits, labels, weight_tensor=None):
    """Batch mean of per-example weighted cross-entropy (torch)."""
    per_example = F.cross_entropy(logits, labels, reduction="none")
    if weight_tensor is not None:
        per_example = per_example * weight_tensor.to(logits.dtype)[labels]
    return per_example.mean()
