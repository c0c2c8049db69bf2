"""
End-to-end runs of the command line: prepare -> cv -> ensemble -> evaluate.
"""
import glob
import os
import time

import pytest

from artifacts import file_fingerprint, read_json, read_jsonl
from config import FIXTURE_DIR
from dataset import Dataset, combine
from main import main

FAST = [
    "--set", "trainer.learning_rate=0.05",
    "--set", "trainer.warmup_steps=0",
    "--set", "trainer.task_dropout=0.0",
    "--set", "trainer.max_epochs=6",
    "--set", "truncation.max_len=64",
]


@pytest.fixture
def smoke(tmp_path, make_split, write_split):
    full = make_split({0: 500, 1: 300, 2: 50}, "combined", seed=7)
    train = Dataset(full.examples[:680], "train")
    dev = Dataset(full.examples[680:], "dev")
    run_dir = os.path.join(tmp_path, "run")
    common = ["--run-dir", run_dir,
              "--set", f"data.train={write_split(train, 'train.tsv')}",
              "--set", f"data.dev={write_split(dev, 'dev.tsv')}"]
    return {"run": run_dir, "common": common, "gold": write_split(combine(train, dev), "gold.tsv"),
            "n": len(full), "tmp": str(tmp_path)}


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def test_prepare_cv_ensemble_evaluate(smoke):
    started = time.time()
    run, common = smoke["run"], smoke["common"]

    assert main(["prepare", *common]) == 0
    folds_path = os.path.join(run, "folds.csv")
    first_folds = read_bytes(folds_path)
    assert len(first_folds.decode("utf-8").splitlines()) == smoke["n"] + 1
    assert main(["prepare", *common]) == 0
    assert read_bytes(folds_path) == first_folds

    for strategy in ("weights", "none"):
        assert main(["cv", *common, *FAST, "--set", f"imbalance.strategy={strategy}",
                     "--model-id", strategy]) == 0
        files = sorted(glob.glob(os.path.join(run, "predictions", f"{strategy}_fold*.jsonl")))
        assert len(files) == 4
        report = read_json(os.path.join(run, "metrics", f"{strategy}_cv.json"))
        assert len(report["per_fold"]) == 4

    spec = os.path.join(smoke["tmp"], "spec.yaml")
    with open(spec, "w", encoding="utf-8") as f:
        f.write("kind: regression_mean\nmembers:\n  - model_id: weights\n  - model_id: none\n")
    submission = os.path.join(run, "submission.csv")
    assert main(["ensemble", "--spec", spec, "--run-dir", run, "--gold", smoke["gold"]]) == 0
    lines = read_bytes(submission).decode("utf-8").splitlines()
    assert lines[0] == "pid,label"
    assert len(lines) == smoke["n"] + 1
    again = os.path.join(smoke["tmp"], "again.csv")
    assert main(["ensemble", "--spec", spec, "--run-dir", run, "--out", again]) == 0
    assert read_bytes(again) == read_bytes(submission)

    assert main(["evaluate", "--gold", smoke["gold"], "--submission", submission, "--run-dir", run]) == 0
    assert read_json(os.path.join(run, "metrics", "evaluate.json"))["n"] == smoke["n"]

    recalls = {}
    for strategy in ("weights", "none"):
        out = os.path.join(smoke["tmp"], f"{strategy}.json")
        files = sorted(glob.glob(os.path.join(run, "predictions", f"{strategy}_fold*.jsonl")))
        assert main(["evaluate", "--gold", smoke["gold"], "--predictions", *files, "--out", out,
                     "--run-dir", run]) == 0
        report = read_json(out)
        assert len(report["per_fold"]) == 4
        recalls[strategy] = report["per_class_recall"]["severe"]
    assert recalls["weights"] >= recalls["none"]

    assert time.time() - started < 120


def test_evaluate_ignores_test_split_predictions(smoke, make_split, write_split):
    run, common = smoke["run"], smoke["common"]
    test = make_split({0: 3, 1: 3, 2: 3}, "test", seed=9, prefix="test")
    with_test = [*common, "--set", f"data.test={write_split(test, 'test.tsv')}"]
    assert main(["prepare", *with_test]) == 0
    assert main(["cv", *with_test, *FAST, "--set", "trainer.max_epochs=1", "--model-id", "best"]) == 0
    files = sorted(glob.glob(os.path.join(run, "predictions", "best_fold*.jsonl")))
    assert len(files) == 8
    out = os.path.join(smoke["tmp"], "oof.json")
    assert main(["evaluate", "--gold", smoke["gold"], "--predictions", *files, "--out", out,
                 "--run-dir", run]) == 0
    report = read_json(out)
    assert report["n"] == smoke["n"]
    assert len(report["per_fold"]) == 4


def test_manifest_pins_backend_config_and_folds(smoke):
    run, common = smoke["run"], smoke["common"]
    assert main(["prepare", *common, "--set", "backend.feature_dim=24", "--set", "data.deduplicate=true"]) == 0
    manifest = read_json(os.path.join(run, "manifest_prepare.json"))
    assert manifest["dataset_fingerprints"]["folds"] == file_fingerprint(os.path.join(run, "folds.csv"))
    assert manifest["backend_options"]["feature_dim"] == 24
    assert manifest["backend_options"]["dim"] == 24
    assert manifest["backend_options"]["vocab_size"] == manifest["config"]["backend.vocab_size"]
    assert manifest["config"]["data.deduplicate"] is True
    assert manifest["config"]["cv.seed"] == manifest["fold_seed"]


def test_prepare_fails_on_small_class(tmp_path, make_split, write_split, capsys):
    train = make_split({0: 8, 1: 8, 2: 2}, seed=1)
    dev = make_split({0: 2, 1: 2, 2: 1}, "dev", seed=2, prefix="dev")
    code = main(["prepare", "--run-dir", os.path.join(tmp_path, "run"),
                 "--set", f"data.train={write_split(train, 'train.tsv')}",
                 "--set", f"data.dev={write_split(dev, 'dev.tsv')}"])
    assert code == 1
    assert "class 2" in capsys.readouterr().err


def test_singleton_grid_search_logs_one_trial(smoke):
    run = smoke["run"]
    assert main(["grid-search", *smoke["common"], *FAST, "--set", "trainer.max_epochs=1",
                 "--set", "grid={learning_rate: [0.05]}"]) == 0
    assert len(read_jsonl(os.path.join(run, "trial_log.jsonl"))) == 1
    best = read_json(os.path.join(run, "best_config.json"))
    assert best["config"]["learning_rate"] == 0.05


def test_train_writes_dev_predictions(smoke):
    run = smoke["run"]
    assert main(["train", *smoke["common"], *FAST, "--set", "trainer.max_epochs=1", "--model-id", "solo"]) == 0
    assert len(read_jsonl(os.path.join(run, "predictions", "solo_dev.jsonl"))) == 170
    manifest = read_json(os.path.join(run, "manifest_train.json"))
    assert set(manifest["dataset_fingerprints"]) == {"data.train", "data.dev"}


def test_missing_dataset_exits_nonzero(tmp_path, capsys):
    code = main(["prepare", "--run-dir", str(tmp_path), "--set", f"data.train={tmp_path}/nope.tsv"])
    assert code == 1
    assert "nope.tsv" in capsys.readouterr().err


def test_corpus_build_with_fixture(tmp_path):
    out = os.path.join(tmp_path, "corpus")
    assert main(["corpus-build", "--communities", os.path.join(FIXTURE_DIR, "communities.csv"),
                 "--out", out, "--fixture", FIXTURE_DIR]) == 0
    assert os.path.exists(os.path.join(out, "corpus.jsonl"))
