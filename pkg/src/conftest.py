"""
Shared fixtures: seeded, linearly separable synthetic posts.
"""
import os

import numpy as np
import pytest

from dataset import Dataset, LabeledExample, save_dataset

CLASS_WORDS = {
    0: ["sunny", "calm", "garden", "laugh", "music", "friends", "picnic", "holiday"],
    1: ["tired", "grey", "slow", "heavy", "numb", "drained", "foggy", "flat"],
    2: ["hopeless", "despair", "worthless", "unbearable", "darkness", "trapped", "crushing", "void"],
}
FILLER = ["today", "i", "feel", "the", "and", "really", "lately", "again"]


def separable_examples(counts, seed=0, prefix="pid"):
    rng = np.random.default_rng(seed)
    examples = []
    for label, n in counts.items():
        for _ in range(n):
            words = list(rng.choice(CLASS_WORDS[label], size=6)) + list(rng.choice(FILLER, size=3))
            rng.shuffle(words)
            examples.append((" ".join(words), label))
    order = rng.permutation(len(examples))
    return [LabeledExample(f"{prefix}_{i:05d}", examples[j][0], examples[j][1]) for i, j in enumerate(order)]


@pytest.fixture
def make_split():
    def factory(counts, split_tag="train", seed=0, prefix="pid"):
        return Dataset(tuple(separable_examples(counts, seed, prefix)), split_tag)
    return factory


@pytest.fixture
def write_split(tmp_path):
    def factory(dataset, name):
        path = os.path.join(tmp_path, name)
        save_dataset(dataset, path)
        return path
    return factory
