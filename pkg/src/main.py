"""
main.py - command line entry point for the depression-severity pipeline.

    python src/main.py prepare      --config data/pipeline.yaml --run-dir runs/demo
    python src/main.py grid-search  --config data/pipeline.yaml --run-dir runs/demo
    python src/main.py cv           --config data/pipeline.yaml --run-dir runs/demo --trial-config runs/demo/best_config.json
    python src/main.py ensemble     --spec data/ensembles/best_model_4_mean.yaml --run-dir runs/demo
    python src/main.py evaluate     --gold data/dev.tsv --submission runs/demo/submission.csv
    python src/main.py corpus-build --communities data/fixtures/communities.csv --out runs/corpus --fixture data/fixtures

Every output lands under the run directory and is written atomically.
"""
import argparse
import glob
import logging
import os
import sys

import pandas as pd

from artifacts import PipelineError, RunManifest, file_fingerprint, read_json, write_json
from backends import build_backend
from config import (
    BACKENDS,
    GRID,
    TOOL_VERSION,
    apply_overrides,
    load_config,
)
from console import (
    print_error,
    print_header,
    print_info,
    print_section,
    print_step,
    print_success,
    print_table,
    print_warning,
)
from dataset import (
    DatasetError,
    combine,
    deduplicate,
    duplicate_groups,
    fold_label_shares,
    label_distribution_report,
    load_dataset,
    load_folds,
    near_duplicates,
    parse_label,
    save_folds,
    stratified_kfold,
)
from ensemble import (
    KINDS,
    EnsembleSpec,
    load_records,
    load_spec,
    run_ensemble,
    save_records,
    severity_argmax,
    single_member_scores,
    write_submission,
)
from metrics import macro_f1, metrics_report
from pretrain_corpus import FixtureClient, RedditClient, build_corpus
from trainer import (
    TrialConfig,
    compare_strategies,
    compare_truncations,
    cross_validate,
    grid_search,
    train_one,
    trial_config_from,
)
from truncation import over_length_fraction

logger = logging.getLogger("pipeline")

FOLDS_FILE = "folds.csv"
PREDICTIONS_DIR = "predictions"
METRICS_DIR = "metrics"


# ---------------------------
# Shared helpers
# ---------------------------
def resolve_config(args):
    cfg = load_config(args.config)
    overrides = list(args.set or [])
    if args.backend:
        overrides.append(f"backend.name={args.backend}")
    if args.seed is not None:
        overrides.append(f"trainer.seed={args.seed}")
        overrides.append(f"cv.seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"run.workers={args.workers}")
    if args.run_dir:
        overrides.append(f"run.dir={args.run_dir}")
    return apply_overrides(cfg, overrides)


def run_path(cfg, *parts):
    path = os.path.join(cfg["run.dir"], *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def make_backend(cfg):
    return build_backend(
        cfg["backend.name"],
        seed=int(cfg["trainer.seed"]),
        vocab_size=int(cfg["backend.vocab_size"]),
        feature_dim=int(cfg["backend.feature_dim"]),
        layers=int(cfg["backend.layers"]),
        heads=int(cfg["backend.heads"]),
        max_len=int(cfg["truncation.max_len"]),
        model_name=cfg["backend.model_name"],
    )


def load_splits(cfg):
    """(train, dev, test or None); train is deduplicated when `data.deduplicate` is on."""
    train = load_dataset(cfg["data.train"], "train")
    dev = load_dataset(cfg["data.dev"], "dev")
    if cfg["data.deduplicate"]:
        train, removed = deduplicate(train)
        print_info(f"Removed {removed} duplicated training example(s)")
    test = None
    if cfg["data.test"]:
        test = load_dataset(cfg["data.test"], "test")
    return train, dev, test


def fingerprints(cfg):
    prints = {key: file_fingerprint(cfg[key]) for key in ("data.train", "data.dev", "data.test")
              if cfg[key] and os.path.exists(cfg[key])}
    folds_path = os.path.join(cfg["run.dir"], FOLDS_FILE)
    if os.path.exists(folds_path):
        prints["folds"] = file_fingerprint(folds_path)
    return prints


def model_id_for(cfg, args):
    return getattr(args, "model_id", None) or cfg["trainer.model_id"] or \
        f"{cfg['backend.name']}-{cfg['imbalance.strategy']}"


def trial_config_for(cfg, backend, args):
    path = getattr(args, "trial_config", None)
    if path:
        raw = read_json(path)
        return TrialConfig.from_dict(raw.get("config", raw))
    return trial_config_from(cfg, backend)


def save_manifest(cfg, command, trial_config, artifacts, backend):
    """Everything needed to rerun `command`: resolved config, backend build options, input hashes."""
    options = {key.split(".", 1)[1]: value for key, value in cfg.items() if key.startswith("backend.")}
    manifest = RunManifest(
        command=command,
        trial_config=trial_config.to_dict() if trial_config else {},
        dataset_fingerprints=fingerprints(cfg),
        fold_seed=int(cfg["cv.seed"]),
        backend=cfg["backend.name"],
        backend_options={**options, **backend.describe(), "seed": int(cfg["trainer.seed"])},
        config=dict(cfg),
        artifacts=artifacts,
        tool_version=TOOL_VERSION,
    )
    path = run_path(cfg, f"manifest_{command}.json")
    manifest.save(path)
    return path


def load_prepared_folds(cfg):
    path = os.path.join(cfg["run.dir"], FOLDS_FILE)
    if not os.path.exists(path):
        raise PipelineError(f"no fold file at {path}; run `prepare` first")
    return load_folds(path, seed=int(cfg["cv.seed"]))


def read_submission(path):
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    if list(frame.columns[:2]) != ["pid", "label"]:
        raise DatasetError("header must be pid,label", path, 1)
    labels = {}
    for index, (pid, raw) in enumerate(zip(frame["pid"], frame["label"])):
        try:
            labels[pid] = parse_label(raw)
        except ValueError as e:
            raise DatasetError(str(e), path, index + 2) from e
    return labels


# ---------------------------
# Subcommands
# ---------------------------
def cmd_prepare(cfg, args):
    print_header("PREPARE: folds and dataset reports")

    print_step(1, "Loading datasets")
    train, dev, test = load_splits(cfg)
    combined = combine(train, dev)
    print_success(f"{len(train)} train + {len(dev)} dev = {len(combined)} examples")

    print_step(2, f"Stratified {cfg['cv.k']}-fold assignment (seed {cfg['cv.seed']})")
    folds = stratified_kfold(combined, int(cfg["cv.k"]), int(cfg["cv.seed"]))
    folds_path = run_path(cfg, FOLDS_FILE)
    save_folds(folds, folds_path)
    shares = fold_label_shares(combined, folds)
    print_table([{"fold": i, **{str(c): s for c, s in share.items()}} for i, share in enumerate(shares)],
                ["fold", "0", "1", "2"])
    print_success(f"Fold file: {folds_path}")

    print_step(3, "Label distribution and duplicates")
    splits = [train, dev] + ([test] if test is not None else [])
    distribution = label_distribution_report([train, dev, combined])
    print_table(distribution, ["split", "label", "count", "percent"])
    dist_path = run_path(cfg, "label_distribution.json")
    write_json(dist_path, distribution)

    exact = {ds.split_tag: duplicate_groups(ds) for ds in splits}
    exact["combined"] = duplicate_groups(combined)
    near = near_duplicates(combined, float(cfg["data.near_dup_threshold"]), int(cfg["data.near_dup_window"]))
    dup_path = run_path(cfg, "duplicates.json")
    write_json(dup_path, {"exact": exact, "near": near})
    for split, groups in exact.items():
        if groups:
            print_warning(f"{split}: {len(groups)} group(s) of exactly duplicated texts")
    if near:
        print_warning(f"{len(near)} near-duplicate candidate pair(s)")

    print_step(4, "Over-length share")
    backend = make_backend(cfg)
    plan = trial_config_from(cfg, backend).truncation
    share = over_length_fraction(splits, backend, plan)
    print_info(f"{share:.1%} of examples exceed the {plan.budget}-token budget")

    manifest = save_manifest(cfg, "prepare", None, {
        "folds": folds_path, "label_distribution": dist_path, "duplicates": dup_path,
    }, backend)
    print_success(f"Manifest: {manifest}")
    return 0


def cmd_train(cfg, args):
    print_header("TRAIN: fit on train, early-stop on dev")
    train, dev, test = load_splits(cfg)
    backend = make_backend(cfg)
    config = trial_config_for(cfg, backend, args)
    model_id = model_id_for(cfg, args)

    print_step(1, f"Training {model_id} ({backend.name}, {config.imbalance_strategy})")
    result = train_one(config, train, dev, backend, model_id=model_id, fold_index=0,
                       predict_sets={"test": test} if test is not None else None,
                       show_progress=sys.stderr.isatty())
    print_success(f"Best dev macro-F1 {result.best_dev_macro_f1:.4f} at epoch {result.best_epoch} "
                  f"({result.epochs_run} epochs run)")

    print_step(2, "Writing predictions and metrics")
    artifacts = {}
    dev_path = run_path(cfg, PREDICTIONS_DIR, f"{model_id}_dev.jsonl")
    save_records(result.predictions, dev_path)
    artifacts["dev_predictions"] = dev_path
    for name, records in result.extra_predictions.items():
        path = run_path(cfg, PREDICTIONS_DIR, f"{model_id}_{name}.jsonl")
        save_records(records, path)
        artifacts[f"{name}_predictions"] = path
    preds = [severity_argmax(r.logits) for r in result.predictions]
    report = metrics_report(dev.labels, preds)
    report["history"] = result.history
    metrics_path = run_path(cfg, METRICS_DIR, f"{model_id}_train.json")
    write_json(metrics_path, report)
    artifacts["metrics"] = metrics_path
    save_manifest(cfg, "train", config, artifacts, backend)
    print_success(f"Metrics: {metrics_path}")
    return 0


def cmd_grid_search(cfg, args):
    print_header("GRID SEARCH: hyperparameters on train / dev")
    train, dev, _ = load_splits(cfg)
    backend = make_backend(cfg)
    fixed = trial_config_for(cfg, backend, args)
    grid = GRID if args.full_grid else cfg["grid"]

    log_path = run_path(cfg, "trial_log.jsonl")
    if os.path.exists(log_path):
        os.remove(log_path)
    best, rows = grid_search(grid, fixed, train, dev, backend, trial_log=log_path,
                             workers=int(cfg["run.workers"]))
    ok = [r for r in rows if r["status"] == "ok"]
    print_table(rows, ["trial", "dev_macro_f1", "epochs_run", "status"])
    if not ok:
        print_error(f"All {len(rows)} trial(s) aborted; see {log_path}")
        return 1
    if len(ok) < len(rows):
        print_warning(f"{len(rows) - len(ok)} trial(s) aborted")

    best_path = run_path(cfg, "best_config.json")
    best_row = next(r for r in rows if r["config"] == best.to_dict())
    write_json(best_path, {"config": best.to_dict(), "dev_macro_f1": best_row["dev_macro_f1"]})
    save_manifest(cfg, "grid-search", best, {"trial_log": log_path, "best_config": best_path}, backend)
    print_success(f"Best trial {best_row['trial']}: dev macro-F1 {best_row['dev_macro_f1']:.4f} "
                  f"(lr={best.learning_rate}, dropout={best.task_dropout}, "
                  f"warmup={best.warmup_steps}, decay={best.weight_decay})")
    return 0


def cmd_cv(cfg, args):
    print_header("CROSS-VALIDATION: k models over the combined set")
    train, dev, test = load_splits(cfg)
    combined = combine(train, dev)
    folds = load_prepared_folds(cfg)
    backend = make_backend(cfg)
    config = trial_config_for(cfg, backend, args)
    model_id = model_id_for(cfg, args)

    print_step(1, f"{folds.k}-fold CV of {model_id}")
    mean, results = cross_validate(config, combined, folds, backend, model_id=model_id,
                                   predict_sets={"test": test} if test is not None else None,
                                   workers=int(cfg["run.workers"]))

    print_step(2, "Writing fold predictions and metrics")
    artifacts = {}
    truths_by_id = {ex.id: ex.label for ex in combined}
    truths, preds = [], []
    for result in results:
        path = run_path(cfg, PREDICTIONS_DIR, f"{model_id}_fold{result.fold_index}.jsonl")
        save_records(result.predictions, path)
        artifacts[f"fold{result.fold_index}"] = path
        for name, records in result.extra_predictions.items():
            extra = run_path(cfg, PREDICTIONS_DIR, f"{model_id}_fold{result.fold_index}_{name}.jsonl")
            save_records(records, extra)
            artifacts[f"fold{result.fold_index}_{name}"] = extra
        for r in result.predictions:
            truths.append(truths_by_id[r.example_id])
            preds.append(severity_argmax(r.logits))

    report = metrics_report(truths, preds, per_fold=[r.best_dev_macro_f1 for r in results])
    report["epochs_run"] = [r.epochs_run for r in results]
    metrics_path = run_path(cfg, METRICS_DIR, f"{model_id}_cv.json")
    write_json(metrics_path, report)
    artifacts["metrics"] = metrics_path
    save_manifest(cfg, "cv", config, artifacts, backend)
    print_table([{"fold": r.fold_index, "macro_f1": r.best_dev_macro_f1, "epochs": r.epochs_run}
                 for r in results], ["fold", "macro_f1", "epochs"])
    print_success(f"CV mean macro-F1 {mean:.4f}")
    return 0


def cmd_compare(cfg, args):
    print_header(f"COMPARE: {args.what} regimens under {cfg['cv.k']}-fold CV")
    train, dev, _ = load_splits(cfg)
    combined = combine(train, dev)
    folds = load_prepared_folds(cfg)
    backend = make_backend(cfg)
    config = trial_config_for(cfg, backend, args)
    if args.what == "imbalance":
        table = compare_strategies(config, combined, folds, backend)
        print_table(table, ["strategy", "cv_macro_f1"])
    else:
        table = compare_truncations(config, combined, folds, backend)
        print_table(table, ["regimen", "head_fraction", "cv_macro_f1"])
    path = run_path(cfg, METRICS_DIR, f"compare_{args.what}.json")
    write_json(path, table)
    save_manifest(cfg, f"compare-{args.what}", config, {"table": path}, backend)
    print_success(f"Comparison: {path}")
    return 0


def _prediction_files(cfg, args):
    if args.predictions:
        return sorted(args.predictions)
    pattern = os.path.join(cfg["run.dir"], PREDICTIONS_DIR, f"*{args.suffix}.jsonl")
    files = sorted(glob.glob(pattern))
    if not files:
        raise PipelineError(f"no prediction files match {pattern}")
    return files


def cmd_ensemble(cfg, args):
    print_header("ENSEMBLE: combine prediction records")
    spec = load_spec(args.spec)
    files = _prediction_files(cfg, args)
    records = load_records(*files)
    print_info(f"{len(records)} record(s) from {len(files)} file(s)")

    labels = run_ensemble(spec, records)
    out = args.out or run_path(cfg, "submission.csv")
    write_submission(labels, out)
    print_success(f"Submission with {len(labels)} label(s): {out}")

    if args.gold:
        gold_set = load_dataset(args.gold, "dev")
        gold = {ex.id: ex.label for ex in gold_set}
        ids = [eid for eid in sorted(labels) if eid in gold]
        print_section("Macro-F1 against gold labels")
        rows = [{"combinator": spec.name or "spec", "macro_f1":
                 macro_f1([gold[i] for i in ids], [labels[i] for i in ids])}]
        for kind in KINDS:
            if kind == "weighted_softmax_mean" and not spec.weights:
                continue
            flat = EnsembleSpec(kind=kind, members=spec.members, weights=spec.weights)
            flat_labels = run_ensemble(flat, records, example_ids=ids)
            rows.append({"combinator": kind, "macro_f1":
                         macro_f1([gold[i] for i in ids], [flat_labels[i] for i in ids])})
        print_table(rows, ["combinator", "macro_f1"])
        singles = single_member_scores(records, gold)
        if singles:
            (model_id, fold), score = max(singles.items(), key=lambda item: item[1])
            print_info(f"Best single member: {model_id} fold {fold} ({score:.4f})")
    return 0


def cmd_evaluate(cfg, args):
    print_header("EVALUATE: score predictions against gold labels")
    gold_set = load_dataset(args.gold, "dev")
    gold = {ex.id: ex.label for ex in gold_set}

    per_fold = None
    if args.submission:
        predicted = read_submission(args.submission)
    else:
        # predictions for examples outside the gold set (e.g. the test split) are not scored
        records = [r for r in load_records(*args.predictions) if r.example_id in gold]
        predicted, by_fold = {}, {}
        for r in records:
            if r.example_id in predicted:
                raise PipelineError(f"several records for example {r.example_id}; ensemble them first")
            predicted[r.example_id] = severity_argmax(r.logits)
            by_fold.setdefault(r.fold, []).append(r.example_id)
        if len(by_fold) > 1:
            per_fold = [macro_f1([gold[i] for i in ids], [predicted[i] for i in ids])
                        for _, ids in sorted(by_fold.items())]

    missing = sorted(set(gold) - set(predicted))
    if missing:
        raise PipelineError(f"{len(missing)} gold example(s) have no prediction, e.g. {missing[:5]}")
    ids = sorted(gold)
    report = metrics_report([gold[i] for i in ids], [predicted[i] for i in ids], per_fold=per_fold)
    out = args.out or run_path(cfg, METRICS_DIR, "evaluate.json")
    write_json(out, report)
    print_table([{"label": name, "f1": f1, "recall": report["per_class_recall"][name]}
                 for name, f1 in report["per_class_f1"].items()], ["label", "f1", "recall"])
    print_success(f"Macro-F1 {report['macro_f1']:.4f} over {report['n']} example(s): {out}")
    return 0


def cmd_corpus_build(cfg, args):
    print_header("CORPUS BUILD: domain-adaptation corpus")
    if args.fixture:
        client = FixtureClient(args.fixture)
        print_info(f"Using fixture posts from {args.fixture}")
    else:
        client = RedditClient()
    report = build_corpus(args.communities, args.out, client,
                          workers=int(cfg["corpus.workers"]),
                          time_filter=cfg["corpus.time_filter"],
                          rate=float(cfg["corpus.quota_rate"]),
                          retry_delay=float(cfg["corpus.retry_delay"]))
    print_table(report["communities"], ["community", "category", "quota", "fetched", "status"])
    for row in report["communities"]:
        if row["status"] != "ok":
            print_warning(f"r/{row['community']}: {row['status']}")
    print_success(f"{report['mental_health_count']} mental-health + {report['control_count']} control "
                  f"documents ({report['bytes']} bytes), {report['duplicates_removed']} duplicate(s) removed")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "grid-search": cmd_grid_search,
    "cv": cmd_cv,
    "compare": cmd_compare,
    "ensemble": cmd_ensemble,
    "evaluate": cmd_evaluate,
    "corpus-build": cmd_corpus_build,
}


# ---------------------------
# Argument parsing
# ---------------------------
def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="YAML config file (nested or dotted keys)")
    shared.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    shared.add_argument("--backend", choices=BACKENDS)
    shared.add_argument("--run-dir", help="directory for every output of this run")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--workers", type=int)
    shared.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(description="Depression-severity classification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("prepare", parents=[shared], help="fold assignment and dataset reports")

    for name, text in (("train", "train one model on train, early-stop on dev"),
                       ("cv", "k-fold cross-validation over train + dev")):
        p = sub.add_parser(name, parents=[shared], help=text)
        p.add_argument("--model-id")
        p.add_argument("--trial-config", help="JSON from grid-search (best_config.json)")

    p = sub.add_parser("grid-search", parents=[shared], help="hyperparameter grid on train / dev")
    p.add_argument("--full-grid", action="store_true", help="use the full 48-point grid")
    p.add_argument("--trial-config")

    p = sub.add_parser("compare", parents=[shared], help="CV per imbalance strategy or truncation regimen")
    p.add_argument("what", choices=["imbalance", "truncation"])
    p.add_argument("--trial-config")

    p = sub.add_parser("ensemble", parents=[shared], help="combine prediction records into a submission")
    p.add_argument("--spec", required=True)
    p.add_argument("--predictions", nargs="+", help="record files (default: the run's predictions)")
    p.add_argument("--suffix", default="", help="default file filter, e.g. _test for test-set records")
    p.add_argument("--gold", help="labeled dataset for per-combinator scores")
    p.add_argument("--out")

    p = sub.add_parser("evaluate", parents=[shared], help="score a submission or prediction records")
    p.add_argument("--gold", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--submission")
    group.add_argument("--predictions", nargs="+")
    p.add_argument("--out")

    p = sub.add_parser("corpus-build", parents=[shared], help="curate the domain-adaptation corpus")
    p.add_argument("--communities", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fixture", help="directory of canned posts instead of the live API")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except PipelineError as e:
        print_error(str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
