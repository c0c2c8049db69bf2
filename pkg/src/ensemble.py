"""
ensemble.py - combine per-(model, fold) prediction records into one label per example.

Combinators: logits_mean, softmax_mean, weighted_softmax_mean, voting,
regression_mean. Every tie (argmax or vote) goes to the higher, more severe
label. Specs are flat (one combinator over all members) or two-stage
(stage 1 within each model_id, stage 2 across the per-model labels).
"""
import io
import csv
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import yaml
from scipy.special import softmax

from artifacts import PipelineError, atomic_write_text, read_jsonl, write_jsonl
from config import LABEL_NAMES, NUM_CLASSES
from metrics import macro_f1

logger = logging.getLogger(__name__)

KINDS = ("logits_mean", "softmax_mean", "weighted_softmax_mean", "voting", "regression_mean")
# values this close to the maximum count as tied
TIE_TOLERANCE = 1e-12


class EnsembleError(PipelineError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    example_id: str
    model_id: str
    fold: int
    logits: tuple

    def __post_init__(self):
        object.__setattr__(self, "logits", tuple(float(v) for v in self.logits))
        if len(self.logits) != NUM_CLASSES:
            raise EnsembleError(
                f"record ({self.model_id}, fold {self.fold}, {self.example_id}) has "
                f"{len(self.logits)} logits, expected {NUM_CLASSES}"
            )
        if not all(math.isfinite(v) for v in self.logits):
            raise EnsembleError(f"record ({self.model_id}, fold {self.fold}, {self.example_id}) has non-finite logits")

    def to_dict(self):
        return {"example_id": self.example_id, "model_id": self.model_id, "fold": self.fold,
                "logits": list(self.logits)}

    @classmethod
    def from_dict(cls, row):
        return cls(str(row["example_id"]), str(row["model_id"]), int(row["fold"]), row["logits"])


@dataclass(frozen=True)
class Selector:
    """(model_id, fold); fold None selects every record of that model for an example."""
    model_id: str
    fold: int | None = None


@dataclass
class EnsembleSpec:
    kind: str | None
    members: list
    stages: list = field(default_factory=list)
    weights: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if not self.members:
            raise EnsembleError("ensemble spec needs at least one member")
        if len(self.stages) > 2:
            raise EnsembleError(f"at most two stages are supported, got {len(self.stages)}")
        kinds = list(self.stages) if self.stages else [self.kind]
        for kind in kinds:
            if kind not in KINDS:
                raise EnsembleError(f"unknown combinator {kind!r}; use one of {', '.join(KINDS)}")
        self.members = [m if isinstance(m, Selector) else Selector(*m) for m in self.members]


# ---------------------------
# Per-record helpers
# ---------------------------
def severity_argmax(values):
    """argmax with ties broken toward the higher label."""
    values = np.asarray(values, dtype=np.float64)
    top = values.max()
    tied = np.flatnonzero(values >= top - TIE_TOLERANCE * max(1.0, abs(top)))
    return int(tied[-1])


def _logits_matrix(records):
    if not records:
        raise EnsembleError("cannot combine an empty set of records")
    widths = {len(r.logits) for r in records}
    if len(widths) != 1:
        raise EnsembleError(f"records disagree on the number of classes: {sorted(widths)}")
    return np.array([r.logits for r in records], dtype=np.float64)


def mean_softmax(records, weights=None):
    """Averaged probability distribution (uniform unless per-record weights given)."""
    probs = softmax(_logits_matrix(records), axis=1)
    if weights is None:
        return probs.mean(axis=0)
    weights = np.asarray(weights, dtype=np.float64)
    return (probs * weights[:, None]).sum(axis=0) / weights.sum()


# ---------------------------
# Combinators (records for one example -> label)
# ---------------------------
def combine_logits_mean(records):
    return severity_argmax(_logits_matrix(records).mean(axis=0))


def combine_softmax_mean(records):
    return severity_argmax(mean_softmax(records))


def combine_weighted_softmax_mean(records, model_weights):
    weights = [model_weights.get(r.model_id, 1.0) for r in records]
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise EnsembleError("softmax weights must be non-negative with a positive sum")
    return severity_argmax(mean_softmax(records, weights))


def vote(labels):
    """Plurality over integer labels; vote ties go to the higher label."""
    if not labels:
        raise EnsembleError("cannot vote over zero labels")
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=NUM_CLASSES)
    return severity_argmax(counts)


def regression_round(labels):
    """Mean of integer labels rounded to nearest, halves up, clamped to [0, K-1]."""
    if not labels:
        raise EnsembleError("cannot average zero labels")
    mean = Fraction(sum(int(v) for v in labels), len(labels))
    rounded = math.floor(mean + Fraction(1, 2))
    return min(max(rounded, 0), NUM_CLASSES - 1)


def combine_voting(records):
    _logits_matrix(records)
    return vote([severity_argmax(r.logits) for r in records])


def combine_regression_mean(records):
    _logits_matrix(records)
    return regression_round([severity_argmax(r.logits) for r in records])


COMBINATORS = {
    "logits_mean": combine_logits_mean,
    "softmax_mean": combine_softmax_mean,
    "voting": combine_voting,
    "regression_mean": combine_regression_mean,
}

# stage 2 combines per-model labels, not logits
LABEL_COMBINATORS = {
    "voting": vote,
    "regression_mean": regression_round,
}


def combine(kind, records, weights=None):
    if kind == "weighted_softmax_mean":
        return combine_weighted_softmax_mean(records, weights or {})
    return COMBINATORS[kind](records)


def _combine_labels(kind, labels):
    if kind in LABEL_COMBINATORS:
        return LABEL_COMBINATORS[kind](labels)
    # logits/softmax kinds over bare labels: treat each label as a one-hot record
    one_hot = [PredictionRecord("-", "-", 0, [1.0 if c == label else 0.0 for c in range(NUM_CLASSES)])
               for label in labels]
    return combine(kind, one_hot)


# ---------------------------
# Running a spec
# ---------------------------
def _index(records):
    index = {}
    for r in records:
        key = (r.model_id, r.fold, r.example_id)
        if key in index:
            raise EnsembleError(f"duplicate record for model {r.model_id}, fold {r.fold}, example {r.example_id}")
        index[key] = r
    return index


def _member_records(selector, example_id, index, folds_by_model):
    if selector.fold is not None:
        record = index.get((selector.model_id, selector.fold, example_id))
        return [record] if record is not None else []
    return [index[(selector.model_id, f, example_id)] for f in folds_by_model.get(selector.model_id, [])
            if (selector.model_id, f, example_id) in index]


def run_ensemble(spec, records, example_ids=None):
    """example_id -> label for every example covered by the records (or `example_ids`)."""
    index = _index(records)
    folds_by_model = {}
    for model_id, fold, _ in index:
        folds_by_model.setdefault(model_id, set()).add(fold)
    folds_by_model = {m: sorted(fs) for m, fs in folds_by_model.items()}

    absent = sorted({s.model_id for s in spec.members} - set(folds_by_model))
    if absent:
        raise EnsembleError(f"no prediction records for model id(s): {', '.join(absent)}")

    if example_ids is None:
        members = {s.model_id for s in spec.members}
        example_ids = sorted({eid for model_id, _, eid in index if model_id in members})

    gaps = []
    selected = {}
    for eid in example_ids:
        chosen = []
        for selector in spec.members:
            found = _member_records(selector, eid, index, folds_by_model)
            if not found:
                fold = "*" if selector.fold is None else selector.fold
                gaps.append(f"({selector.model_id}, fold {fold}, {eid})")
            chosen.extend(found)
        selected[eid] = chosen
    if gaps:
        shown = ", ".join(gaps[:20])
        more = f" and {len(gaps) - 20} more" if len(gaps) > 20 else ""
        raise EnsembleError(f"missing prediction records: {shown}{more}")

    labels = {}
    for eid, chosen in selected.items():
        if spec.stages and len(spec.stages) == 2:
            inner, outer = spec.stages
            groups = {}
            for r in chosen:
                groups.setdefault(r.model_id, []).append(r)
            per_model = [combine(inner, groups[m], spec.weights) for m in sorted(groups)]
            labels[eid] = _combine_labels(outer, per_model)
        else:
            kind = spec.stages[0] if spec.stages else spec.kind
            labels[eid] = combine(kind, chosen, spec.weights)
    logger.debug("ensemble %s: %d members, %d examples", spec.name, len(spec.members), len(labels))
    return labels


def single_member_labels(records):
    """(model_id, fold) -> {example_id: argmax label}; the single-model baselines."""
    out = {}
    for r in records:
        out.setdefault((r.model_id, r.fold), {})[r.example_id] = severity_argmax(r.logits)
    return out


def single_member_scores(records, gold):
    """(model_id, fold) -> macro-F1 of that one member against `gold` (example_id -> label)."""
    scores = {}
    for key, labels in sorted(single_member_labels(records).items()):
        ids = [eid for eid in labels if eid in gold]
        if ids:
            scores[key] = macro_f1([gold[eid] for eid in ids], [labels[eid] for eid in ids])
    return scores


# ---------------------------
# Files
# ---------------------------
def save_records(records, path):
    write_jsonl(path, [r.to_dict() for r in records])


def load_records(*paths):
    records = []
    for path in paths:
        for row in read_jsonl(path):
            try:
                records.append(PredictionRecord.from_dict(row))
            except (KeyError, TypeError, ValueError) as e:
                raise EnsembleError(f"{path}: bad prediction record {row!r} ({e})") from e
    return records


def spec_from_dict(raw, name=""):
    members = []
    for m in raw.get("members", []):
        if isinstance(m, dict):
            members.append(Selector(str(m["model_id"]), m.get("fold")))
        elif isinstance(m, str):
            members.append(Selector(m, None))
        else:
            members.append(Selector(str(m[0]), m[1] if len(m) > 1 else None))
    return EnsembleSpec(
        kind=raw.get("kind"),
        members=members,
        stages=list(raw.get("stages") or []),
        weights={str(k): float(v) for k, v in (raw.get("weights") or {}).items()},
        name=raw.get("name", name),
    )


def load_spec(path):
    """YAML (or JSON, which YAML also reads) ensemble spec file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise EnsembleError(f"cannot read ensemble spec {path}: {e}") from e
    if not isinstance(raw, dict):
        raise EnsembleError(f"ensemble spec {path} must be a mapping")
    return spec_from_dict(raw, name=str(path))


def write_submission(labels, path):
    """`pid,label_string` rows, sorted by pid."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["pid", "label"])
    for eid in sorted(labels):
        writer.writerow([eid, LABEL_NAMES[labels[eid]]])
    atomic_write_text(path, buffer.getvalue())
