"""Training/model configuration shared by the trainer, model and CLI."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .numerics import ConfigError


@dataclass
class TrainConfig:
    d_model: int = 64
    L: int = 16
    K: int = 60
    M: int = 3
    heads: int | None = None
    lambda_cls: float = 1.0
    lambda_b: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 20
    seed: int = 0
    dropout: float = 0.1
    clip_norm: float = 5.0
    patience: int = 10
    word_dim: int = 32
    pos_dim: int = 8
    char_dim: int = 16
    context_dim: int = 32
    lstm_hidden: int = 64
    ffn_dim: int | None = None
    plain_sublayers: bool = False
    per_level_linear: bool = False
    null_weight: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("d_model", "L", "K", "M", "word_dim", "pos_dim", "char_dim",
                    "context_dim", "lstm_hidden")
        for name in positive:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        for name in ("lambda_cls", "lambda_b", "learning_rate", "clip_norm", "null_weight"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
                raise ConfigError(f"{name} must be > 0, got {value!r}")
        for name in ("epochs", "patience", "seed"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {value!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout!r}")
        if self.char_dim % 2:
            raise ConfigError("char_dim must be even")
        if self.heads is not None and (self.heads < 1 or self.d_model % self.heads):
            raise ConfigError(f"heads={self.heads} must divide d_model={self.d_model}")
        if self.ffn_dim is not None and self.ffn_dim < 1:
            raise ConfigError("ffn_dim must be >= 1")

    @property
    def num_heads(self) -> int:
        from .decoder import default_heads
        return self.heads if self.heads is not None else default_heads(self.d_model)

    @property
    def ffn_width(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.d_model

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> TrainConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> TrainConfig:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        return cls.from_json(doc)
