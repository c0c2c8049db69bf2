"""
Tests for head/tail truncation.
"""
import math
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from truncation import (
    TokenBudgetPlan,
    TruncationError,
    over_length_fraction,
    resolve_head_fraction,
    truncate,
    truncation_regimens,
)


def oracle(tokens, max_len, n_special, head_fraction):
    budget = max_len - n_special
    if len(tokens) <= budget:
        return list(tokens)
    head = math.floor(head_fraction * budget)
    out = []
    for i in range(head):
        out.append(tokens[i])
    for i in range(len(tokens) - (budget - head), len(tokens)):
        out.append(tokens[i])
    return out


def test_matches_prefix_suffix_oracle_on_500_random_cases():
    rng = np.random.default_rng(7)
    started = time.time()
    for _ in range(500):
        length = int(rng.integers(0, 1500))
        n_special = int(rng.integers(0, 5))
        head_fraction = float(rng.random())
        tokens = list(range(length))
        plan = TokenBudgetPlan(max_len=512, n_special=n_special, head_fraction=head_fraction)
        assert truncate(tokens, plan) == oracle(tokens, 512, n_special, head_fraction)
    assert time.time() - started < 5


@pytest.mark.parametrize("fraction, head, tail", [(0.25, 128, 384), (0.5, 256, 256), (0.75, 384, 128)])
def test_published_splits_at_512(fraction, head, tail):
    plan = TokenBudgetPlan(max_len=512, n_special=0, head_fraction=fraction)
    assert (plan.head_count, plan.tail_count) == (head, tail)
    tokens = list(range(600))
    out = truncate(tokens, plan)
    assert out == tokens[:head] + tokens[600 - tail:]


def test_two_special_tokens_shrink_the_budget():
    plan = TokenBudgetPlan(max_len=512, n_special=2, head_fraction=0.5)
    tokens = list(range(600))
    out = truncate(tokens, plan)
    assert len(out) == 510
    assert out == tokens[0:255] + tokens[345:600]


def test_short_sequence_is_untouched():
    tokens = list(range(400))
    assert truncate(tokens, TokenBudgetPlan(512, 0, 0.1)) == tokens


@given(st.lists(st.integers(), max_size=700), st.floats(0.0, 1.0), st.integers(0, 4))
def test_output_is_prefix_plus_suffix(tokens, fraction, n_special):
    plan = TokenBudgetPlan(max_len=256, n_special=n_special, head_fraction=fraction)
    out = truncate(tokens, plan)
    assert len(out) == min(len(tokens), plan.budget)
    if len(tokens) > plan.budget:
        head = plan.head_count
        assert out[:head] == tokens[:head]
        assert out[head:] == tokens[len(tokens) - (plan.budget - head):]


def test_head_and_tail_extremes():
    tokens = list(range(20))
    assert truncate(tokens, TokenBudgetPlan(10, 0, 1.0)) == tokens[:10]
    assert truncate(tokens, TokenBudgetPlan(10, 0, 0.0)) == tokens[10:]


@pytest.mark.parametrize("kwargs", [
    {"max_len": 2, "n_special": 2},
    {"max_len": 10, "n_special": -1},
    {"max_len": 10, "head_fraction": 1.5},
])
def test_invalid_plans_raise(kwargs):
    with pytest.raises(TruncationError):
        TokenBudgetPlan(**kwargs)


def test_presets_resolve():
    assert resolve_head_fraction("head") == 1.0
    assert resolve_head_fraction("tail75") == 0.25
    assert resolve_head_fraction("0.3") == pytest.approx(0.3)
    with pytest.raises(TruncationError):
        resolve_head_fraction("middle")
    regimens = truncation_regimens(512, 2)
    assert set(regimens) == {"head", "head75", "split50", "tail75", "tail"}
    assert regimens["split50"].budget == 510


class _WordBackend:
    def tokenize(self, text):
        return text.split()


class _Split:
    def __init__(self, texts):
        self.texts = texts


def test_over_length_fraction():
    plan = TokenBudgetPlan(max_len=3, n_special=0)
    assert over_length_fraction([_Split(["a b", "c"])], _WordBackend(), plan) == 0.0
    assert over_length_fraction([_Split(["a b c d", "e"])], _WordBackend(), plan) == 0.5
    assert over_length_fraction([], _WordBackend(), plan) == 0.0
