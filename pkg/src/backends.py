"""
backends.py - encoder backends the trainer fine-tunes.

Every backend tokenizes text to content token ids (no special tokens), and
encodes a batch of truncated id lists to the pooled sequence-start
representation, one feature vector per example.

  toy-linear       hashed bag-of-tokens -> frozen Gaussian random projection
  toy-transformer  small trainable transformer encoder, [CLS]-position pooling
  external         Hugging Face AutoModel adapter (full-scale encoders)
"""
import hashlib
import logging
import re

import numpy as np
import torch
import torch.nn as nn

from artifacts import PipelineError
from config import (
    BACKENDS,
    EXTERNAL_MODEL_NAME,
    TOY_FEATURE_DIM,
    TOY_TRANSFORMER_HEADS,
    TOY_TRANSFORMER_LAYERS,
    TOY_VOCAB_SIZE,
)

logger = logging.getLogger(__name__)

TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]", re.UNICODE)

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
FIRST_WORD_ID = 3


class BackendError(PipelineError):
    pass


class EncoderBackend(nn.Module):
    """Interface: tokenize(text) -> ids, forward(batch of ids) -> [B, dim] features."""

    name = "abstract"
    n_special = 0
    dim = 0
    trainable = False

    def tokenize(self, text):
        raise NotImplementedError

    def forward(self, batch_ids):
        raise NotImplementedError

    def describe(self):
        return {"name": self.name, "dim": self.dim, "n_special": self.n_special, "trainable": self.trainable}


def hashed_token_ids(text, vocab_size):
    """Deterministic word-piece-free tokenizer: blake2b(lower(token)) mod vocab."""
    ids = []
    span = vocab_size - FIRST_WORD_ID
    for token in TOKEN_PATTERN.findall(text.lower()):
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        ids.append(FIRST_WORD_ID + int.from_bytes(digest, "little") % span)
    return ids


# ---------------------------
# toy-linear
# ---------------------------
class ToyLinearBackend(EncoderBackend):
    """Frozen random projection of normalized token counts; only the head trains."""

    name = "toy-linear"
    n_special = 0
    trainable = False

    def __init__(self, vocab_size=TOY_VOCAB_SIZE, feature_dim=TOY_FEATURE_DIM, seed=0):
        super().__init__()
        self.vocab_size = vocab_size
        self.dim = feature_dim
        rng = np.random.default_rng(seed)
        projection = rng.normal(0.0, 1.0 / np.sqrt(feature_dim), size=(vocab_size, feature_dim))
        self.register_buffer("projection", torch.tensor(projection, dtype=torch.float32))

    def tokenize(self, text):
        return hashed_token_ids(text, self.vocab_size)

    def forward(self, batch_ids):
        counts = torch.zeros(len(batch_ids), self.vocab_size, device=self.projection.device)
        for row, ids in enumerate(batch_ids):
            if ids:
                counts[row].index_add_(0, torch.tensor(ids, dtype=torch.long, device=counts.device),
                                       torch.ones(len(ids), device=counts.device))
        norms = counts.norm(dim=1, keepdim=True).clamp_min(1.0)
        return (counts / norms) @ self.projection


# ---------------------------
# toy-transformer
# ---------------------------
class ToyTransformerBackend(EncoderBackend):
    """A few transformer layers over hashed tokens; the [CLS] position is the representation."""

    name = "toy-transformer"
    n_special = 2
    trainable = True

    def __init__(self, vocab_size=TOY_VOCAB_SIZE, feature_dim=TOY_FEATURE_DIM,
                 layers=TOY_TRANSFORMER_LAYERS, heads=TOY_TRANSFORMER_HEADS, max_len=512, seed=0):
        super().__init__()
        torch.manual_seed(seed)
        self.vocab_size = vocab_size
        self.dim = feature_dim
        self.max_len = max_len
        self.embed = nn.Embedding(vocab_size, feature_dim, padding_idx=PAD_ID)
        self.position = nn.Embedding(max_len, feature_dim)
        layer = nn.TransformerEncoderLayer(
            d_model=feature_dim, nhead=heads, dim_feedforward=feature_dim * 2,
            dropout=0.0, batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=layers, enable_nested_tensor=False)

    def tokenize(self, text):
        return hashed_token_ids(text, self.vocab_size)

    def forward(self, batch_ids):
        device = self.embed.weight.device
        rows = [[CLS_ID] + list(ids) + [SEP_ID] for ids in batch_ids]
        width = max(len(r) for r in rows)
        if width > self.max_len:
            raise BackendError(f"sequence of {width} ids exceeds max_len {self.max_len}; truncate first")
        input_ids = torch.full((len(rows), width), PAD_ID, dtype=torch.long, device=device)
        for i, r in enumerate(rows):
            input_ids[i, :len(r)] = torch.tensor(r, dtype=torch.long, device=device)
        padding_mask = input_ids.eq(PAD_ID)
        positions = torch.arange(width, device=device).unsqueeze(0)
        hidden = self.embed(input_ids) + self.position(positions)
        hidden = self.encoder(hidden, src_key_padding_mask=padding_mask)
        return hidden[:, 0]


# ---------------------------
# external (transformers)
# ---------------------------
class ExternalBackend(EncoderBackend):
    """Adapter over a pretrained Hugging Face encoder (e.g. roberta-large)."""

    name = "external"
    trainable = True

    def __init__(self, model_name=EXTERNAL_MODEL_NAME):
        super().__init__()
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as e:
            raise BackendError("the external backend needs the `transformers` package") from e
        self.model_name = model_name
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModel.from_pretrained(model_name)
        self.dim = self.model.config.hidden_size
        self.n_special = self.tokenizer.num_special_tokens_to_add(pair=False)

    def tokenize(self, text):
        return self.tokenizer.encode(text, add_special_tokens=False)

    def forward(self, batch_ids):
        device = next(self.model.parameters()).device
        rows = [self.tokenizer.build_inputs_with_special_tokens(list(ids)) for ids in batch_ids]
        width = max(len(r) for r in rows)
        pad = self.tokenizer.pad_token_id
        input_ids = torch.full((len(rows), width), pad, dtype=torch.long, device=device)
        attention = torch.zeros((len(rows), width), dtype=torch.long, device=device)
        for i, r in enumerate(rows):
            input_ids[i, :len(r)] = torch.tensor(r, dtype=torch.long, device=device)
            attention[i, :len(r)] = 1
        output = self.model(input_ids=input_ids, attention_mask=attention)
        return output.last_hidden_state[:, 0]

    def describe(self):
        info = super().describe()
        info["model_name"] = self.model_name
        return info


def build_backend(name, seed=0, **options):
    """Backend by CLI name; options come from the `backend.*` config keys."""
    if name == "toy-linear":
        return ToyLinearBackend(
            vocab_size=options.get("vocab_size", TOY_VOCAB_SIZE),
            feature_dim=options.get("feature_dim", TOY_FEATURE_DIM),
            seed=seed,
        )
    if name == "toy-transformer":
        return ToyTransformerBackend(
            vocab_size=options.get("vocab_size", TOY_VOCAB_SIZE),
            feature_dim=options.get("feature_dim", TOY_FEATURE_DIM),
            layers=options.get("layers", TOY_TRANSFORMER_LAYERS),
            heads=options.get("heads", TOY_TRANSFORMER_HEADS),
            max_len=options.get("max_len", 512),
            seed=seed,
        )
    if name == "external":
        return ExternalBackend(options.get("model_name", EXTERNAL_MODEL_NAME))
    raise BackendError(f"unknown backend {name!r}; use one of {', '.join(BACKENDS)}")
