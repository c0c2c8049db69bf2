"""
config.py - pipeline defaults and the declarative config loader.

Every default lives here as a module constant. A YAML config file (nested or
dotted keys) is layered on top, then `--set key=value` overrides from the CLI.
"""
import os

import yaml

from artifacts import PipelineError

TOOL_VERSION = "1.0.0"

# ---------------------------
# PATHS
# ---------------------------
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA_DIR = os.path.join(PROJECT_ROOT, "data")
RUNS_DIR = os.path.join(PROJECT_ROOT, "runs")
FIXTURE_DIR = os.path.join(DATA_DIR, "fixtures")

# ---------------------------
# LABELS
# ---------------------------
NUM_CLASSES = 3
LABEL_NAMES = {0: "not depression", 1: "moderate", 2: "severe"}

# ---------------------------
# TRUNCATION
# ---------------------------
MAX_LEN = 512
HEAD_FRACTION = 0.5
TRUNCATION_PRESETS = {
    "head": 1.0,
    "head75": 0.75,
    "split50": 0.5,
    "tail75": 0.25,
    "tail": 0.0,
}

# ---------------------------
# IMBALANCE
# ---------------------------
IMBALANCE_STRATEGIES = ("none", "undersample", "oversample", "weights")
IMBALANCE_STRATEGY = "weights"

# ---------------------------
# TRAINER (fixed hyperparameters)
# ---------------------------
LEARNING_RATE = 6e-6
TASK_DROPOUT = 0.2
WARMUP_STEPS = 200
WEIGHT_DECAY = 0.01
BATCH_SIZE = 8
MAX_EPOCHS = 100
OPTIMIZER_EPS = 1e-8
OPTIMIZER_BETA1 = 0.9
OPTIMIZER_BETA2 = 0.999
ES_PATIENCE_EPOCHS = 2
ES_THRESHOLD = 0.0025
SEED = 42

# Grid search space
GRID = {
    "learning_rate": [2e-6, 4e-6, 6e-6, 8e-6],
    "task_dropout": [0.0, 0.2, 0.4],
    "warmup_steps": [200, 500],
    "weight_decay": [0.0, 0.01],
}

# ---------------------------
# CROSS-VALIDATION / DATASET
# ---------------------------
CV_K = 4
FOLD_SEED = 42
DEDUPLICATE_TRAIN = False
NEAR_DUP_THRESHOLD = 0.95
NEAR_DUP_WINDOW = 5

# ---------------------------
# BACKENDS
# ---------------------------
BACKEND = "toy-linear"
BACKENDS = ("toy-linear", "toy-transformer", "external")
TOY_VOCAB_SIZE = 4096
TOY_FEATURE_DIM = 64
TOY_TRANSFORMER_LAYERS = 2
TOY_TRANSFORMER_HEADS = 4
EXTERNAL_MODEL_NAME = "roberta-large"

# ---------------------------
# CORPUS
# ---------------------------
QUOTA_RATE = 0.02
CORPUS_TIME_FILTER = "all"
CORPUS_WORKERS = 4
CORPUS_RETRY_DELAY = 1.0
# credentials are read from the environment only
ENV_CLIENT_ID = "CORPUS_CLIENT_ID"
ENV_CLIENT_SECRET = "CORPUS_CLIENT_SECRET"
ENV_USER_AGENT = "CORPUS_USER_AGENT"

# ---------------------------
# DOTTED-KEY DEFAULTS
# ---------------------------
DEFAULTS = {
    "data.train": os.path.join(DATA_DIR, "train.tsv"),
    "data.dev": os.path.join(DATA_DIR, "dev.tsv"),
    "data.test": None,
    "data.deduplicate": DEDUPLICATE_TRAIN,
    "data.near_dup_threshold": NEAR_DUP_THRESHOLD,
    "data.near_dup_window": NEAR_DUP_WINDOW,
    "truncation.max_len": MAX_LEN,
    "truncation.head_fraction": HEAD_FRACTION,
    "imbalance.strategy": IMBALANCE_STRATEGY,
    "trainer.learning_rate": LEARNING_RATE,
    "trainer.task_dropout": TASK_DROPOUT,
    "trainer.warmup_steps": WARMUP_STEPS,
    "trainer.weight_decay": WEIGHT_DECAY,
    "trainer.batch_size": BATCH_SIZE,
    "trainer.max_epochs": MAX_EPOCHS,
    "trainer.optimizer_eps": OPTIMIZER_EPS,
    "trainer.optimizer_beta1": OPTIMIZER_BETA1,
    "trainer.optimizer_beta2": OPTIMIZER_BETA2,
    "trainer.es_patience_epochs": ES_PATIENCE_EPOCHS,
    "trainer.es_threshold": ES_THRESHOLD,
    "trainer.seed": SEED,
    "trainer.model_id": None,
    "grid": GRID,
    "cv.k": CV_K,
    "cv.seed": FOLD_SEED,
    "backend.name": BACKEND,
    "backend.vocab_size": TOY_VOCAB_SIZE,
    "backend.feature_dim": TOY_FEATURE_DIM,
    "backend.layers": TOY_TRANSFORMER_LAYERS,
    "backend.heads": TOY_TRANSFORMER_HEADS,
    "backend.model_name": EXTERNAL_MODEL_NAME,
    "run.dir": RUNS_DIR,
    "run.workers": 1,
    "corpus.quota_rate": QUOTA_RATE,
    "corpus.time_filter": CORPUS_TIME_FILTER,
    "corpus.workers": CORPUS_WORKERS,
    "corpus.retry_delay": CORPUS_RETRY_DELAY,
}


class ConfigError(PipelineError):
    pass


def flatten(mapping, prefix=""):
    """Flatten nested dicts into dotted keys; the `grid` table stays whole."""
    flat = {}
    for key, value in mapping.items():
        dotted = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, dict) and dotted != "grid":
            flat.update(flatten(value, dotted))
        else:
            flat[dotted] = value
    return flat


def _check_keys(keys):
    unknown = sorted(k for k in keys if k not in DEFAULTS)
    if unknown:
        raise ConfigError(f"Unknown config key(s): {', '.join(unknown)}")


def load_config(path=None):
    """Defaults overlaid with the YAML file at `path` (if any)."""
    cfg = dict(DEFAULTS)
    if path is None:
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"Config {path} must be a mapping")
    flat = flatten(raw)
    _check_keys(flat)
    cfg.update(flat)
    return cfg


def apply_overrides(cfg, overrides):
    """Apply `key=value` strings; values parse as YAML scalars."""
    cfg = dict(cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"Override '{item}' must look like key=value")
        key, _, value = item.partition("=")
        key = key.strip()
        _check_keys([key])
        cfg[key] = yaml.safe_load(value)
    return cfg
