"""Token representations: concatenated embeddings fed through a BiLSTM."""
from __future__ import annotations

import json
from dataclasses import dataclass

import torch

from .data import EncodedSentence, DataError, Vocabulary
from .numerics import DTYPE, ConfigError, ParameterStore, bilstm, bilstm_final, dropout, linear


@dataclass
class EncoderConfig:
    word_dim: int = 32
    pos_dim: int = 8
    char_dim: int = 16
    # width of the learned table standing in for pretrained contextual vectors
    context_dim: int = 32
    d_model: int = 64
    lstm_hidden: int = 64

    def validate(self) -> None:
        for name in ("word_dim", "pos_dim", "char_dim", "context_dim", "d_model", "lstm_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.char_dim % 2:
            raise ConfigError("char_dim must be even (forward and backward halves)")

    @property
    def embed_width(self) -> int:
        return self.context_dim + self.word_dim + self.pos_dim + self.char_dim


def register(store: ParameterStore, cfg: EncoderConfig, vocab: Vocabulary) -> None:
    cfg.validate()
    n_words = len(vocab.words)
    store.add("embed.context", (n_words, cfg.context_dim), fan_in=cfg.context_dim)
    store.add("embed.word", (n_words, cfg.word_dim), fan_in=cfg.word_dim)
    store.add("embed.pos", (max(len(vocab.pos), 2), cfg.pos_dim), fan_in=cfg.pos_dim)
    store.add("embed.char", (len(vocab.chars), cfg.char_dim), fan_in=cfg.char_dim)
    store.add_lstm("char_lstm", cfg.char_dim, cfg.char_dim // 2)
    store.add_lstm("lstm", cfg.embed_width, cfg.lstm_hidden)
    store.add_linear("encoder.proj", 2 * cfg.lstm_hidden, cfg.d_model)


def char_vectors(store: ParameterStore, char_ids: list[list[int]]) -> torch.Tensor:
    """Final forward/backward char-BiLSTM states per token (zero for empty tokens)."""
    unique = sorted(set(map(tuple, char_ids)))
    slot = {chars: i for i, chars in enumerate(unique)}
    table = store["embed.char"]
    steps = max(len(c) for c in unique)
    ids = torch.zeros(len(unique), max(steps, 1), dtype=torch.long)
    for i, chars in enumerate(unique):
        ids[i, :len(chars)] = torch.tensor(chars, dtype=torch.long)
    padded = table[ids][:, :steps]
    finals = bilstm_final(store, "char_lstm", padded, [len(c) for c in unique])
    return finals[torch.tensor([slot[tuple(c)] for c in char_ids], dtype=torch.long)]


def embed_tokens(store: ParameterStore, sent: EncodedSentence,
                 context: torch.Tensor | None = None) -> torch.Tensor:
    """Per-token ``[context; word; pos; char]`` rows."""
    words = torch.tensor(sent.word_ids, dtype=torch.long)
    if context is None:
        ctx = store["embed.context"][words]
    else:
        width = store["embed.context"].shape[1]
        if tuple(context.shape) != (len(sent), width):
            raise ConfigError(f"context vectors {tuple(context.shape)} != ({len(sent)}, {width})")
        ctx = context.to(DTYPE)
    return torch.cat([
        ctx,
        store["embed.word"][words],
        store["embed.pos"][torch.tensor(sent.pos_ids, dtype=torch.long)],
        char_vectors(store, sent.char_ids),
    ], dim=-1)


def encode(store: ParameterStore, embedded: torch.Tensor, rate: float = 0.0,
           gen: torch.Generator | None = None) -> torch.Tensor:
    """BiLSTM over the embedded rows, projected to width d (pyramid level 1)."""
    hidden = bilstm(store, "lstm", dropout(embedded, rate, gen))
    return linear(store, "encoder.proj", dropout(hidden, rate, gen))


def load_context_vectors(path, width: int | None = None) -> list[torch.Tensor]:
    """Read a sidecar of precomputed per-token vectors, one JSON object per sentence."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows = json.loads(line)["vectors"]
                t = torch.tensor(rows, dtype=DTYPE)
            except (KeyError, TypeError, ValueError, json.JSONDecodeError):
                raise DataError(f"{path}:{lineno}: expected {{\"vectors\": N x width}}") from None
            if t.dim() != 2 or (width is not None and t.shape[1] != width):
                raise DataError(f"{path}:{lineno}: vectors must be N x {width or 'width'}")
            out.append(t)
    return out
