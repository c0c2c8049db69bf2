"""
Tests for loading, duplicate handling and stratified folds.
"""
import os

import numpy as np
import pytest

from dataset import (
    Dataset,
    DatasetError,
    FoldError,
    LabeledExample,
    combine,
    deduplicate,
    fold_label_shares,
    label_counts,
    label_distribution_report,
    load_dataset,
    load_folds,
    near_duplicates,
    save_dataset,
    save_folds,
    split_by_folds,
    stratified_kfold,
)


def write(tmp_path, name, text):
    path = os.path.join(tmp_path, name)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    return path


def synthetic(counts, prefix="ex"):
    examples = []
    n = 0
    for label, count in counts.items():
        for _ in range(count):
            examples.append(LabeledExample(f"{prefix}{n:05d}", f"post number {n}", label))
            n += 1
    rng = np.random.default_rng(0)
    order = rng.permutation(len(examples))
    return Dataset(tuple(examples[i] for i in order), "combined")


# ---------------------------
# Loading
# ---------------------------
def test_load_official_tsv_layout(tmp_path):
    path = write(tmp_path, "train.tsv",
                 "PID\tText data\tClass labels\n"
                 "train_pid_1\tI feel fine today\tnot depression\n"
                 "train_pid_2\tnothing helps\tModerate\n"
                 "train_pid_3\tI cannot go on\tsevere\n")
    ds = load_dataset(path, "train")
    assert len(ds) == 3
    assert ds.labels == [0, 1, 2]
    assert ds.ids == ["train_pid_1", "train_pid_2", "train_pid_3"]


def test_text_is_kept_bit_exact(tmp_path):
    path = write(tmp_path, "dev.csv", 'pid,text,label\np1,"  two  spaces,\nand a newline ",moderate\n')
    assert load_dataset(path, "dev").texts == ["  two  spaces,\nand a newline "]


def test_empty_text_reports_its_line(tmp_path):
    path = write(tmp_path, "train.csv", "pid,text,label\np1,hello,severe\np2,   ,severe\n")
    with pytest.raises(DatasetError, match=r"train.csv:3:"):
        load_dataset(path, "train")


def test_unknown_label_lists_accepted_labels(tmp_path):
    path = write(tmp_path, "train.csv", "pid,text,label\np1,hello,mild\n")
    with pytest.raises(DatasetError, match="accepted labels") as info:
        load_dataset(path, "train")
    assert info.value.line == 2


def test_malformed_row_reports_its_line(tmp_path):
    path = write(tmp_path, "train.csv", "pid,text,label\np1,hello,severe\np2,one,two,severe\n")
    with pytest.raises(DatasetError, match="malformed row") as info:
        load_dataset(path, "train")
    assert info.value.line == 3
    assert "train.csv:3:" in str(info.value)


def test_duplicate_id_is_rejected(tmp_path):
    path = write(tmp_path, "train.csv", "pid,text,label\np1,a,severe\np1,b,severe\n")
    with pytest.raises(DatasetError, match="already used"):
        load_dataset(path, "train")


def test_test_split_may_be_unlabeled(tmp_path):
    path = write(tmp_path, "test.csv", "pid,text\nt1,some text\n")
    assert load_dataset(path, "test").labels == [None]
    with pytest.raises(DatasetError, match="missing label"):
        load_dataset(path, "dev")


def test_save_then_load_keeps_everything(tmp_path):
    ds = Dataset((LabeledExample("a", "x, \"quoted\"\ny", 2), LabeledExample("b", "plain", 0)), "train")
    path = os.path.join(tmp_path, "out.csv")
    save_dataset(ds, path)
    assert load_dataset(path, "train") == ds


# ---------------------------
# Counts and duplicates
# ---------------------------
def test_label_counts():
    assert label_counts(Dataset((), "train")) == {0: 0, 1: 0, 2: 0}
    ds = synthetic({0: 2755, 1: 3678, 2: 768})
    assert label_counts(ds) == {0: 2755, 1: 3678, 2: 768}
    assert sum(label_counts(ds).values()) == len(ds)


def test_distribution_report_percentages():
    rows = label_distribution_report([synthetic({0: 1, 1: 2, 2: 1})])
    assert [r["percent"] for r in rows] == [25.0, 50.0, 25.0]


def test_deduplicate_keeps_first_occurrence():
    ds = Dataset((LabeledExample("a", "same  text ", 1), LabeledExample("b", "same text", 2),
                  LabeledExample("c", "other", 0)), "train")
    out, removed = deduplicate(ds)
    assert removed == 1
    assert out.ids == ["a", "c"]
    again, removed_again = deduplicate(out)
    assert removed_again == 0
    assert again == out


def test_near_duplicates_are_only_reported():
    ds = Dataset((LabeledExample("a", "I have been feeling very low lately", 1),
                  LabeledExample("b", "I have been feeling very low lately!", 1),
                  LabeledExample("c", "completely different sentence here", 0)), "train")
    pairs = near_duplicates(ds, threshold=0.95)
    assert [(p["id_a"], p["id_b"]) for p in pairs] == [("a", "b")]


def test_combine_rejects_shared_ids():
    a = Dataset((LabeledExample("x", "t", 0),), "train")
    with pytest.raises(DatasetError):
        combine(a, Dataset((LabeledExample("x", "u", 1),), "dev"))


# ---------------------------
# Folds
# ---------------------------
def test_perfectly_divisible_folds():
    ds = synthetic({0: 4, 1: 4, 2: 4})
    folds = stratified_kfold(ds, 4, seed=3)
    by_id = {ex.id: ex.label for ex in ds}
    for f in range(4):
        assert sorted(by_id[i] for i in folds.fold_ids(f)) == [0, 1, 2]


def test_train_proportions_within_two_points():
    ds = synthetic({0: 2755, 1: 3678, 2: 768})
    folds = stratified_kfold(ds, 4, seed=42)
    assert sorted(folds.assignment) == sorted(ds.ids)
    global_share = {c: n / len(ds) for c, n in label_counts(ds).items()}
    for share in fold_label_shares(ds, folds):
        for c in range(3):
            assert abs(share[c] - global_share[c]) <= 0.02


def test_fold_file_is_byte_identical_across_runs(tmp_path):
    ds = synthetic({0: 2755, 1: 3678, 2: 768})
    first = os.path.join(tmp_path, "a.csv")
    second = os.path.join(tmp_path, "b.csv")
    save_folds(stratified_kfold(ds, 4, seed=42), first)
    save_folds(stratified_kfold(ds, 4, seed=42), second)
    with open(first, "rb") as a, open(second, "rb") as b:
        assert a.read() == b.read()
    assert load_folds(first).assignment == stratified_kfold(ds, 4, seed=42).assignment


def test_fold_file_quotes_awkward_ids(tmp_path):
    ds = Dataset(tuple(LabeledExample(pid, "text", label) for pid, label in
                       [("a,1", 0), ('say "hi"', 1), ("plain", 2), ("b,2", 0), ("c", 1), ("d", 2)]), "train")
    folds = stratified_kfold(ds, 2, seed=0)
    path = os.path.join(tmp_path, "folds.csv")
    save_folds(folds, path)
    assert load_folds(path).assignment == folds.assignment


def test_small_class_is_named():
    ds = synthetic({0: 10, 1: 10, 2: 3})
    with pytest.raises(FoldError, match="class 2"):
        stratified_kfold(ds, 4, seed=0)


def test_split_by_folds_partitions():
    ds = synthetic({0: 8, 1: 8, 2: 8})
    folds = stratified_kfold(ds, 4, seed=1)
    seen = []
    for f in range(4):
        train, valid = split_by_folds(ds, folds, f)
        assert len(train) + len(valid) == len(ds)
        assert not set(train.ids) & set(valid.ids)
        seen.extend(valid.ids)
    assert sorted(seen) == sorted(ds.ids)
