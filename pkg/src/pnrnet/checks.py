"""Finite-difference check of the full model loss on a toy sentence."""
from __future__ import annotations

from .config import TrainConfig
from .data import SynthConfig, build_vocab, encode_sentence, generate_synthetic
from .model import PnRNet
from .numerics import GradCheckReport, grad_check

TOY_CONFIG = dict(d_model=8, L=3, K=4, M=2, word_dim=4, pos_dim=2, char_dim=4,
                  context_dim=4, lstm_hidden=4, dropout=0.0)


def toy_config(**overrides) -> TrainConfig:
    return TrainConfig(**{**TOY_CONFIG, **overrides})


def toy_sentence(n: int = 6, types: int = 2, seed: int = 3):
    corpus = generate_synthetic(SynthConfig(sentences=200, vocab_size=8 * types + 24, types=types,
                                            max_entity_len=min(3, n), max_sentence_len=n, seed=seed))
    sentence = next(s for s in corpus if len(s) == n and s.entities)
    return sentence, build_vocab(corpus)


def model_grad_check(config: TrainConfig | None = None, eps: float = 1e-3, coords: int = 200,
                     seed: int = 0, n: int = 6, types: int = 2) -> GradCheckReport:
    """Central-difference check of every loss term of the full model (dropout off)."""
    config = config or toy_config()
    sentence, vocab = toy_sentence(n, types)
    model = PnRNet(config, vocab)
    enc = encode_sentence(sentence, vocab)
    return grad_check(lambda: model.loss(enc, model.forward(enc)).terms, model.store,
                      eps=eps, n_coords=coords, seed=seed)
