"""
trainer.py - fine-tuning protocol: classifier head over the sequence-start
representation, Adam with decoupled weight decay, constant learning rate after
linear warmup, early stopping on dev macro-F1, grid search and k-fold
cross-validation.
"""
import copy
import itertools
import logging
import math
import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
import torch.nn as nn
from tqdm import tqdm

from artifacts import PipelineError, append_jsonl
from config import IMBALANCE_STRATEGIES, NUM_CLASSES
from dataset import split_by_folds
from ensemble import PredictionRecord
from imbalance import apply_strategy, weighted_ce_loss
from metrics import cv_mean, macro_f1
from truncation import TokenBudgetPlan, resolve_head_fraction, truncate, truncation_regimens

logger = logging.getLogger(__name__)


class TrainerError(PipelineError):
    pass


class TrialAborted(PipelineError):
    """A trial hit a non-finite loss; grid search scores it as -inf."""


# ---------------------------
# Configuration
# ---------------------------
@dataclass(frozen=True)
class TrialConfig:
    learning_rate: float = 6e-6
    task_dropout: float = 0.2
    warmup_steps: int = 200
    weight_decay: float = 0.01
    batch_size: int = 8
    max_epochs: int = 100
    optimizer_eps: float = 1e-8
    optimizer_beta1: float = 0.9
    optimizer_beta2: float = 0.999
    es_patience_epochs: int = 2
    es_threshold: float = 0.0025
    seed: int = 42
    truncation: TokenBudgetPlan = field(default_factory=TokenBudgetPlan)
    imbalance_strategy: str = "none"

    def __post_init__(self):
        numbers = {k: v for k, v in asdict(self).items() if isinstance(v, float)}
        bad = sorted(k for k, v in numbers.items() if not math.isfinite(v))
        if bad:
            raise TrainerError(f"non-finite config value(s): {', '.join(bad)}")
        if self.batch_size < 1:
            raise TrainerError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise TrainerError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0.0 <= self.task_dropout < 1.0:
            raise TrainerError(f"task_dropout must be in [0, 1), got {self.task_dropout}")
        if self.imbalance_strategy not in IMBALANCE_STRATEGIES:
            raise TrainerError(f"unknown imbalance strategy {self.imbalance_strategy!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        if isinstance(raw.get("truncation"), dict):
            raw["truncation"] = TokenBudgetPlan(**raw["truncation"])
        return cls(**raw)


def trial_config_from(cfg, backend=None):
    """TrialConfig from a flat dotted-key config; n_special comes from the backend."""
    n_special = backend.n_special if backend is not None else 0
    plan = TokenBudgetPlan(
        max_len=int(cfg["truncation.max_len"]),
        n_special=n_special,
        head_fraction=resolve_head_fraction(cfg["truncation.head_fraction"]),
    )
    return TrialConfig(
        learning_rate=float(cfg["trainer.learning_rate"]),
        task_dropout=float(cfg["trainer.task_dropout"]),
        warmup_steps=int(cfg["trainer.warmup_steps"]),
        weight_decay=float(cfg["trainer.weight_decay"]),
        batch_size=int(cfg["trainer.batch_size"]),
        max_epochs=int(cfg["trainer.max_epochs"]),
        optimizer_eps=float(cfg["trainer.optimizer_eps"]),
        optimizer_beta1=float(cfg["trainer.optimizer_beta1"]),
        optimizer_beta2=float(cfg["trainer.optimizer_beta2"]),
        es_patience_epochs=int(cfg["trainer.es_patience_epochs"]),
        es_threshold=float(cfg["trainer.es_threshold"]),
        seed=int(cfg["trainer.seed"]),
        truncation=plan,
        imbalance_strategy=str(cfg["imbalance.strategy"]),
    )


@dataclass
class FoldResult:
    fold_index: int
    best_dev_macro_f1: float
    epochs_run: int
    best_epoch: int = 0
    predictions: list = field(default_factory=list)
    extra_predictions: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


# ---------------------------
# Building blocks
# ---------------------------
class EarlyStopping:
    """
    Tracks the best dev score. An epoch counts as progress only when it beats the
    best score so far by at least `threshold`; `patience` epochs without progress stop training.
    """

    def __init__(self, patience, threshold):
        self.patience = patience
        self.threshold = threshold
        self.best_score = -math.inf
        self.best_epoch = 0
        self.stale_epochs = 0

    def step(self, score, epoch):
        """Record one epoch's score; returns True when it is a new best."""
        progressed = score > self.best_score and (
            self.best_score == -math.inf or score - self.best_score >= self.threshold
        )
        is_best = score > self.best_score
        if is_best:
            self.best_score = score
            self.best_epoch = epoch
        self.stale_epochs = 0 if progressed else self.stale_epochs + 1
        return is_best

    @property
    def should_stop(self):
        return self.stale_epochs >= self.patience


def constant_schedule_with_warmup(optimizer, warmup_steps):
    """Linear warmup from 0 over `warmup_steps`, then the base rate."""
    def factor(step):
        if warmup_steps > 0 and step < warmup_steps:
            return step / warmup_steps
        return 1.0
    return torch.optim.lr_scheduler.LambdaLR(optimizer, factor)


class SequenceClassifier(nn.Module):
    """backend -> pooled representation -> dropout -> K-way linear layer."""

    def __init__(self, backend, dropout, num_classes=NUM_CLASSES):
        super().__init__()
        self.backend = backend
        self.dropout = nn.Dropout(dropout)
        self.classifier = nn.Linear(backend.dim, num_classes)

    def forward(self, batch_ids):
        pooled = self.backend(batch_ids)
        return self.classifier(self.dropout(pooled))


def seed_everything(seed):
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


def encode_dataset(dataset, backend, plan):
    return [truncate(backend.tokenize(text), plan) for text in dataset.texts]


@torch.no_grad()
def predict_logits(model, encoded, batch_size):
    model.eval()
    out = []
    for start in range(0, len(encoded), batch_size):
        out.append(model(encoded[start:start + batch_size]).double().cpu().numpy())
    if not out:
        return np.zeros((0, NUM_CLASSES))
    return np.concatenate(out, axis=0)


def _records(dataset, logits, model_id, fold_index):
    return [PredictionRecord(ex.id, model_id, fold_index, tuple(row.tolist()))
            for ex, row in zip(dataset.examples, logits)]


# ---------------------------
# One training run
# ---------------------------
def train_one(config, train, dev, backend, model_id="model", fold_index=0,
              predict_sets=None, show_progress=False):
    """Fine-tune on `train`, early-stop on `dev`; predictions come from the best epoch."""
    if len(train) == 0 or len(dev) == 0:
        raise TrainerError("train and dev datasets must be non-empty")

    seed_everything(config.seed)
    train_set, class_weights = apply_strategy(train, config.imbalance_strategy, config.seed)
    weight_tensor = class_weights.as_tensor(NUM_CLASSES) if class_weights else None

    model = SequenceClassifier(copy.deepcopy(backend), config.task_dropout)
    if not backend.trainable:
        for p in model.backend.parameters():
            p.requires_grad_(False)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(
        params,
        lr=config.learning_rate,
        betas=(config.optimizer_beta1, config.optimizer_beta2),
        eps=config.optimizer_eps,
        weight_decay=config.weight_decay,
    )
    scheduler = constant_schedule_with_warmup(optimizer, config.warmup_steps)

    train_ids = encode_dataset(train_set, backend, config.truncation)
    train_labels = torch.tensor(train_set.labels, dtype=torch.long)
    dev_ids = encode_dataset(dev, backend, config.truncation)
    dev_truths = dev.labels

    stopper = EarlyStopping(config.es_patience_epochs, config.es_threshold)
    shuffler = torch.Generator().manual_seed(config.seed)
    best_state = copy.deepcopy(model.state_dict())
    best_dev_logits = None
    history = []
    step = 0
    epochs_run = 0

    for epoch in range(1, config.max_epochs + 1):
        model.train()
        order = torch.randperm(len(train_ids), generator=shuffler).tolist()
        batches = range(0, len(order), config.batch_size)
        running = 0.0
        for start in tqdm(batches, desc=f"{model_id} f{fold_index} e{epoch}", leave=False,
                          disable=not show_progress):
            idx = order[start:start + config.batch_size]
            logits = model([train_ids[i] for i in idx])
            loss = weighted_ce_loss(logits, train_labels[idx], weight_tensor)
            if not torch.isfinite(loss):
                raise TrialAborted(
                    f"non-finite loss {loss.item()} at epoch {epoch}, step {step} "
                    f"(lr={config.learning_rate}, dropout={config.task_dropout})"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            step += 1
            running += loss.item() * len(idx)

        epochs_run = epoch
        dev_logits = predict_logits(model, dev_ids, max(config.batch_size, 64))
        score = macro_f1(dev_truths, [int(np.argmax(row)) for row in dev_logits])
        is_best = stopper.step(score, epoch)
        history.append({"epoch": epoch, "train_loss": running / len(order), "dev_macro_f1": score})
        logger.debug("%s fold %d epoch %d: loss %.4f dev macro-F1 %.4f",
                     model_id, fold_index, epoch, running / len(order), score)
        if is_best:
            best_state = copy.deepcopy(model.state_dict())
            best_dev_logits = dev_logits
        if stopper.should_stop:
            logger.info("%s fold %d: early stop after epoch %d (best %.4f at epoch %d)",
                        model_id, fold_index, epoch, stopper.best_score, stopper.best_epoch)
            break

    model.load_state_dict(best_state)
    extra = {}
    for name, ds in (predict_sets or {}).items():
        logits = predict_logits(model, encode_dataset(ds, backend, config.truncation),
                                max(config.batch_size, 64))
        extra[name] = _records(ds, logits, model_id, fold_index)

    return FoldResult(
        fold_index=fold_index,
        best_dev_macro_f1=stopper.best_score,
        epochs_run=epochs_run,
        best_epoch=stopper.best_epoch,
        predictions=_records(dev, best_dev_logits, model_id, fold_index),
        extra_predictions=extra,
        history=history,
    )


# ---------------------------
# Grid search
# ---------------------------
def grid_points(grid):
    """Full Cartesian product, in key order then value order."""
    if not grid or any(len(values) == 0 for values in grid.values()):
        raise TrainerError("grid must name at least one hyperparameter, each with at least one value")
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def _run_trial(args):
    index, config, train, dev, backend = args
    started = time.time()
    try:
        result = train_one(config, train, dev, backend, model_id=f"trial{index}")
        score, epochs, error = result.best_dev_macro_f1, result.epochs_run, None
    except (TrialAborted, FloatingPointError) as e:
        score, epochs, error = -math.inf, 0, str(e)
    return index, score, epochs, time.time() - started, error


def _map_trials(jobs, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_trial, jobs))
    return [_run_trial(job) for job in jobs]


def grid_search(grid, fixed, train, dev, backend, trial_log=None, workers=1):
    """Train every grid point on train, score on dev; returns (best config, trial log rows)."""
    points = grid_points(grid)
    configs = []
    for point in points:
        unknown = sorted(set(point) - set(TrialConfig.__dataclass_fields__))
        if unknown:
            raise TrainerError(f"grid names unknown hyperparameter(s): {', '.join(unknown)}")
        # YAML may hand over numbers as strings (e.g. 6e-6)
        typed = {k: type(getattr(fixed, k))(v) for k, v in point.items()}
        configs.append(replace(fixed, **typed))
    logger.info("Grid search over %d trials", len(configs))

    jobs = [(i, cfg, train, dev, backend) for i, cfg in enumerate(configs)]
    rows = []
    for index, score, epochs, seconds, error in _map_trials(jobs, workers):
        row = {
            "trial": index,
            "config": configs[index].to_dict(),
            "dev_macro_f1": score if math.isfinite(score) else None,
            "epochs_run": epochs,
            "wall_seconds": round(seconds, 3),
            "status": "ok" if error is None else "aborted",
        }
        if error is not None:
            row["error"] = error
            logger.warning("Trial %d aborted: %s", index, error)
        if trial_log:
            append_jsonl(trial_log, row)
        rows.append(row)

    return configs[best_trial(rows, configs)], rows


def best_trial(rows, configs):
    """Index of the winning trial: highest dev score, then lower learning rate, lower dropout, earlier trial."""
    def rank(row):
        cfg = configs[row["trial"]]
        score = row["dev_macro_f1"] if row["dev_macro_f1"] is not None else -math.inf
        return (score, -cfg.learning_rate, -cfg.task_dropout, -row["trial"])

    return max(rows, key=rank)["trial"]


# ---------------------------
# Cross-validation
# ---------------------------
def _run_fold(args):
    config, combined, folds, backend, model_id, fold_index, predict_sets = args
    train, valid = split_by_folds(combined, folds, fold_index)
    return train_one(config, train, valid, backend, model_id=model_id, fold_index=fold_index,
                     predict_sets=predict_sets)


def cross_validate(config, combined, folds, backend, model_id="model", predict_sets=None, workers=1):
    """Train k models, each validated on its held-out fold; (mean macro-F1, fold results)."""
    missing = [pid for pid in combined.ids if pid not in folds.assignment]
    if missing:
        raise TrainerError(f"{len(missing)} example(s) are not covered by the folds")
    jobs = [(config, combined, folds, backend, model_id, i, predict_sets) for i in range(folds.k)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(job) for job in jobs]
    mean = cv_mean([r.best_dev_macro_f1 for r in results])
    logger.info("%s: CV mean macro-F1 %.4f over %d folds", model_id, mean, folds.k)
    return mean, results


# ---------------------------
# Experiment sweeps
# ---------------------------
def compare_strategies(config, combined, folds, backend, strategies=IMBALANCE_STRATEGIES):
    """CV mean per imbalance strategy; an aborted strategy reports None."""
    table = []
    for strategy in strategies:
        try:
            mean, _ = cross_validate(replace(config, imbalance_strategy=strategy), combined, folds,
                                     backend, model_id=f"imbalance-{strategy}")
        except TrialAborted as e:
            logger.warning("strategy %s aborted: %s", strategy, e)
            mean = None
        table.append({"strategy": strategy, "cv_macro_f1": mean})
    return table


def compare_truncations(config, combined, folds, backend, regimens=None):
    """CV mean per truncation regimen (default: the five named presets)."""
    plan = config.truncation
    regimens = regimens or truncation_regimens(plan.max_len, plan.n_special)
    table = []
    for name, regimen in regimens.items():
        mean, _ = cross_validate(replace(config, truncation=regimen), combined, folds, backend,
                                 model_id=f"truncation-{name}")
        table.append({"regimen": name, "head_fraction": regimen.head_fraction, "cv_macro_f1": mean})
    return table
