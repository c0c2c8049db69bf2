"""
dataset.py - load, validate, deduplicate and fold the labeled task data.

Input files are delimiter-separated (`.tsv` → tab, anything else → comma)
with a `pid,text,label` header. Label strings are matched case-insensitively
against the task's label names and their variants.
"""
import csv
import io
import logging
import os
import re
from collections import Counter
from dataclasses import dataclass, field

import Levenshtein
import numpy as np
import pandas as pd
from sklearn.model_selection import StratifiedKFold

from artifacts import PipelineError, atomic_write_text
from config import LABEL_NAMES, NUM_CLASSES

logger = logging.getLogger(__name__)

SPLIT_TAGS = ("train", "dev", "combined", "test")

# label string (lower-cased, single-spaced) -> ordinal
LABEL_VARIANTS = {
    "not depression": 0,
    "not depressed": 0,
    "not_depression": 0,
    "moderate": 1,
    "moderately": 1,
    "moderately depressed": 1,
    "moderate depression": 1,
    "severe": 2,
    "severely": 2,
    "severely depressed": 2,
    "severe depression": 2,
}

COLUMN_VARIANTS = {
    "pid": ("pid", "id", "posting_id", "post_id"),
    "text": ("text", "text data", "text_data", "post"),
    "label": ("label", "class label", "class labels", "class_label", "labels"),
}


class DatasetError(PipelineError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class FoldError(PipelineError):
    pass


# ---------------------------
# Domain types
# ---------------------------
@dataclass(frozen=True)
class LabeledExample:
    id: str
    text: str
    label: int | None

    def __post_init__(self):
        if self.label is not None and self.label not in LABEL_NAMES:
            raise DatasetError(f"label {self.label!r} for id {self.id!r} is not in {sorted(LABEL_NAMES)}")
        if not self.text.strip():
            raise DatasetError(f"empty text for id {self.id!r}")


@dataclass(frozen=True)
class Dataset:
    examples: tuple
    split_tag: str

    def __post_init__(self):
        if self.split_tag not in SPLIT_TAGS:
            raise DatasetError(f"unknown split tag {self.split_tag!r}; expected one of {SPLIT_TAGS}")
        object.__setattr__(self, "examples", tuple(self.examples))
        counts = Counter(ex.id for ex in self.examples)
        repeated = sorted(i for i, c in counts.items() if c > 1)
        if repeated:
            raise DatasetError(f"duplicate ids in {self.split_tag} dataset: {', '.join(repeated[:10])}")

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def ids(self):
        return [ex.id for ex in self.examples]

    @property
    def texts(self):
        return [ex.text for ex in self.examples]

    @property
    def labels(self):
        return [ex.label for ex in self.examples]

    def subset(self, indices, split_tag=None):
        return Dataset(tuple(self.examples[i] for i in indices), split_tag or self.split_tag)


@dataclass
class FoldAssignment:
    k: int
    seed: int
    assignment: dict = field(default_factory=dict)

    def fold_ids(self, fold_index):
        return [pid for pid, f in self.assignment.items() if f == fold_index]


# ---------------------------
# Load / save
# ---------------------------
def parse_label(raw, accepted=LABEL_VARIANTS):
    key = " ".join(str(raw).strip().lower().split())
    if key in accepted:
        return accepted[key]
    if key.isdigit() and int(key) in LABEL_NAMES:
        return int(key)
    raise ValueError(f"unknown label {raw!r}; accepted labels: {', '.join(sorted(set(accepted)))}")


def _separator(path):
    return "\t" if str(path).lower().endswith(".tsv") else ","


def _resolve_columns(columns, path, require_label):
    lowered = {c.strip().lower(): c for c in columns}
    resolved = {}
    for name, variants in COLUMN_VARIANTS.items():
        for variant in variants:
            if variant in lowered:
                resolved[name] = lowered[variant]
                break
    needed = ("pid", "text", "label") if require_label else ("pid", "text")
    missing = [n for n in needed if n not in resolved]
    if missing:
        raise DatasetError(f"header must contain {', '.join(needed)}; missing {', '.join(missing)}", path, 1)
    return resolved


def load_dataset(path, split_tag):
    """Load and validate a labeled (or, for `test`, unlabeled) data file."""
    if not os.path.exists(path):
        raise DatasetError("file does not exist", path)
    try:
        frame = pd.read_csv(
            path,
            sep=_separator(path),
            dtype=str,
            keep_default_na=False,
            encoding="utf-8",
            quoting=csv.QUOTE_MINIMAL,
        )
    except pd.errors.ParserError as e:
        line = None
        match = re.search(r"line (\d+)", str(e))
        if match:
            line = int(match.group(1))
        raise DatasetError(f"malformed row ({e})", path, line) from e
    except UnicodeDecodeError as e:
        raise DatasetError(f"file is not valid UTF-8 ({e.reason})", path) from e

    require_label = split_tag != "test"
    columns = _resolve_columns(frame.columns, path, require_label)
    has_label = "label" in columns

    examples = []
    seen = {}
    for row_index, row in enumerate(frame.itertuples(index=False)):
        line = row_index + 2  # header is line 1
        record = dict(zip(frame.columns, row))
        pid = record[columns["pid"]].strip()
        text = record[columns["text"]]
        if not pid:
            raise DatasetError("empty id", path, line)
        if not text.strip():
            raise DatasetError(f"empty text for id {pid!r}", path, line)
        if pid in seen:
            raise DatasetError(f"id {pid!r} already used at line {seen[pid]}", path, line)
        seen[pid] = line
        label = None
        if has_label and (require_label or record[columns["label"]].strip()):
            try:
                label = parse_label(record[columns["label"]])
            except ValueError as e:
                raise DatasetError(str(e), path, line) from e
        examples.append(LabeledExample(pid, text, label))

    logger.info("Loaded %d examples from %s (%s)", len(examples), path, split_tag)
    return Dataset(tuple(examples), split_tag)


def save_dataset(dataset, path):
    """Write `pid,text,label` using the task's label names."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, delimiter=_separator(path), lineterminator="\n")
    writer.writerow(["pid", "text", "label"])
    for ex in dataset:
        writer.writerow([ex.id, ex.text, "" if ex.label is None else LABEL_NAMES[ex.label]])
    atomic_write_text(path, buffer.getvalue())


def combine(*datasets):
    """Concatenate splits into the `combined` set (train + dev)."""
    examples = []
    for ds in datasets:
        examples.extend(ds.examples)
    return Dataset(tuple(examples), "combined")


# ---------------------------
# Label statistics
# ---------------------------
def label_counts(dataset):
    counts = {label: 0 for label in range(NUM_CLASSES)}
    for ex in dataset:
        if ex.label is not None:
            counts[ex.label] += 1
    return counts


def label_distribution_report(datasets):
    """Rows of {split, label, count, percent} in the layout of the label table."""
    rows = []
    for ds in datasets:
        counts = label_counts(ds)
        total = sum(counts.values())
        for label, count in counts.items():
            rows.append({
                "split": ds.split_tag,
                "label": LABEL_NAMES[label],
                "count": count,
                "percent": round(100.0 * count / total, 2) if total else 0.0,
            })
    return rows


# ---------------------------
# Deduplication
# ---------------------------
def normalize_text(text):
    """Trim and collapse internal whitespace."""
    return " ".join(text.split())


def deduplicate(dataset):
    """Drop rows whose normalized text was already seen; first occurrence wins."""
    seen = set()
    kept = []
    for ex in dataset:
        key = normalize_text(ex.text)
        if key in seen:
            continue
        seen.add(key)
        kept.append(ex)
    removed = len(dataset) - len(kept)
    if removed:
        logger.info("Removed %d duplicated examples from %s", removed, dataset.split_tag)
    return Dataset(tuple(kept), dataset.split_tag), removed


def duplicate_groups(dataset):
    """Groups of ids sharing one normalized text (exact duplicates)."""
    groups = {}
    for ex in dataset:
        groups.setdefault(normalize_text(ex.text), []).append(ex.id)
    return [ids for ids in groups.values() if len(ids) > 1]


def near_duplicates(dataset, threshold=0.95, window=5):
    """
    Candidate near-duplicate pairs (Levenshtein ratio >= threshold).
    Sorted-neighbourhood scan: each normalized text is compared with the next
    `window` texts in sorted order. Exact duplicates are skipped.
    """
    keyed = sorted((normalize_text(ex.text).lower(), ex.id) for ex in dataset)
    pairs = []
    for i, (text_a, id_a) in enumerate(keyed):
        for text_b, id_b in keyed[i + 1:i + 1 + window]:
            if text_a == text_b:
                continue
            ratio = Levenshtein.ratio(text_a, text_b)
            if ratio >= threshold:
                pairs.append({"id_a": id_a, "id_b": id_b, "ratio": round(ratio, 4)})
    return pairs


# ---------------------------
# Stratified folds
# ---------------------------
def stratified_kfold(dataset, k, seed):
    """Assign every id to one of k folds, preserving class proportions."""
    if k < 2:
        raise FoldError(f"k must be >= 2, got {k}")
    counts = label_counts(dataset)
    for label, count in counts.items():
        if 0 < count < k:
            raise FoldError(
                f"class {label} ({LABEL_NAMES[label]}) has {count} member(s), fewer than k={k}"
            )
    if any(label is None for label in dataset.labels):
        raise FoldError("cannot stratify a dataset with unlabeled examples")

    labels = np.asarray(dataset.labels)
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    assignment = {}
    positions = np.zeros(len(labels))
    for fold_index, (_, valid_idx) in enumerate(splitter.split(positions, labels)):
        for i in valid_idx:
            assignment[dataset.examples[i].id] = fold_index
    # keep dataset order in the mapping
    ordered = {pid: assignment[pid] for pid in dataset.ids}
    return FoldAssignment(k=k, seed=seed, assignment=ordered)


def split_by_folds(dataset, folds, fold_index):
    """(train, valid) for one fold: valid = the fold, train = the rest."""
    missing = [pid for pid in dataset.ids if pid not in folds.assignment]
    if missing:
        raise FoldError(f"{len(missing)} id(s) have no fold, e.g. {missing[:5]}")
    train_idx = [i for i, pid in enumerate(dataset.ids) if folds.assignment[pid] != fold_index]
    valid_idx = [i for i, pid in enumerate(dataset.ids) if folds.assignment[pid] == fold_index]
    return dataset.subset(train_idx, "train"), dataset.subset(valid_idx, "dev")


def fold_label_shares(dataset, folds):
    """Per-fold label proportions, for the stratification check."""
    by_id = {ex.id: ex.label for ex in dataset}
    shares = []
    for fold_index in range(folds.k):
        labels = [by_id[pid] for pid in folds.fold_ids(fold_index)]
        total = len(labels)
        shares.append({label: (labels.count(label) / total if total else 0.0) for label in range(NUM_CLASSES)})
    return shares


def save_folds(folds, path):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["pid", "fold"])
    writer.writerows(folds.assignment.items())
    atomic_write_text(path, buffer.getvalue())


def load_folds(path, seed=None):
    frame = pd.read_csv(path, dtype={"pid": str, "fold": int}, keep_default_na=False)
    if list(frame.columns) != ["pid", "fold"]:
        raise FoldError(f"{path}: header must be pid,fold")
    assignment = dict(zip(frame["pid"], (int(f) for f in frame["fold"])))
    k = max(assignment.values()) + 1 if assignment else 0
    return FoldAssignment(k=k, seed=seed if seed is not None else -1, assignment=assignment)
