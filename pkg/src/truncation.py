"""
truncation.py - head/tail truncation of token id sequences.

A plan keeps floor(head_fraction * B) tokens from the start and the rest of
the budget B = max_len - n_special from the end, dropping the middle.
"""
import logging
import math
from dataclasses import dataclass

from artifacts import PipelineError
from config import TRUNCATION_PRESETS

logger = logging.getLogger(__name__)


class TruncationError(PipelineError):
    pass


@dataclass(frozen=True)
class TokenBudgetPlan:
    max_len: int = 512
    n_special: int = 0
    head_fraction: float = 0.5

    def __post_init__(self):
        if self.n_special < 0:
            raise TruncationError(f"n_special must be >= 0, got {self.n_special}")
        if self.max_len - self.n_special < 1:
            raise TruncationError(
                f"max_len ({self.max_len}) - n_special ({self.n_special}) must leave at least one content token"
            )
        if not 0.0 <= self.head_fraction <= 1.0:
            raise TruncationError(f"head_fraction must be in [0, 1], got {self.head_fraction}")

    @property
    def budget(self):
        return self.max_len - self.n_special

    @property
    def head_count(self):
        return math.floor(self.head_fraction * self.budget)

    @property
    def tail_count(self):
        return self.budget - self.head_count


def resolve_head_fraction(value):
    """Preset name (`head`, `head75`, `split50`, `tail75`, `tail`) or a number in [0, 1]."""
    if isinstance(value, str):
        key = value.strip().lower()
        if key in TRUNCATION_PRESETS:
            return TRUNCATION_PRESETS[key]
        try:
            value = float(key)
        except ValueError:
            raise TruncationError(
                f"unknown truncation preset {value!r}; use one of {', '.join(TRUNCATION_PRESETS)} or a number"
            ) from None
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise TruncationError(f"head_fraction must be in [0, 1], got {value}")
    return value


def truncation_regimens(max_len=512, n_special=0):
    """The five named regimens as plans, keyed by preset name."""
    return {
        name: TokenBudgetPlan(max_len=max_len, n_special=n_special, head_fraction=fraction)
        for name, fraction in TRUNCATION_PRESETS.items()
    }


def truncate(tokens, plan):
    """Keep a prefix and a suffix of `tokens` whose lengths fill the plan's budget."""
    tokens = list(tokens)
    budget = plan.budget
    if len(tokens) <= budget:
        return tokens
    head = plan.head_count
    tail = budget - head
    return tokens[:head] + (tokens[len(tokens) - tail:] if tail else [])


def over_length_fraction(datasets, backend, plan):
    """Share of examples whose content token count exceeds the plan's budget."""
    total = 0
    over = 0
    for ds in datasets:
        for text in ds.texts:
            total += 1
            if len(backend.tokenize(text)) > plan.budget:
                over += 1
    if total == 0:
        return 0.0
    logger.info("%d of %d examples exceed %d content tokens", over, total, plan.budget)
    return over / total
