"""End-to-end assembly of the propose and refine stages."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from . import decoder, encoder, heads, proposer, pyramid
from .config import TrainConfig
from .data import EncodedSentence, Vocabulary
from .matcher import LossBreakdown, LossWeights, total_loss
from .numerics import ParameterStore
from .pyramid import SpanIndexMap


@dataclass
class ForwardResult:
    tokens: torch.Tensor
    pyramid: pyramid.SpanPyramid
    index: SpanIndexMap
    proposals: proposer.ProposalSet
    decoded: decoder.DecoderOutput
    layer_preds: list[heads.PredictionSet]

    @property
    def final(self) -> heads.PredictionSet:
        return self.layer_preds[-1]


class PnRNet:
    def __init__(self, config: TrainConfig, vocab: Vocabulary):
        self.config = config
        self.vocab = vocab
        self.store = ParameterStore(seed=config.seed)
        self.encoder_config = encoder.EncoderConfig(
            word_dim=config.word_dim, pos_dim=config.pos_dim, char_dim=config.char_dim,
            context_dim=config.context_dim, d_model=config.d_model, lstm_hidden=config.lstm_hidden)
        d = config.d_model
        encoder.register(self.store, self.encoder_config, vocab)
        pyramid.register(self.store, d, config.L, config.per_level_linear)
        proposer.register(self.store, d, vocab.num_types)
        decoder.register(self.store, d, config.M, config.num_heads, config.ffn_width,
                         config.plain_sublayers)
        heads.register(self.store, d, vocab.num_types)
        self.weights = LossWeights(config.lambda_cls, config.lambda_b)

    def forward(self, sent: EncodedSentence, context: torch.Tensor | None = None,
                gen: torch.Generator | None = None, trace: bool = False) -> ForwardResult:
        cfg = self.config
        rate = cfg.dropout if gen is not None else 0.0
        embedded = encoder.embed_tokens(self.store, sent, context)
        tokens = encoder.encode(self.store, embedded, rate, gen)
        pyr = pyramid.build_pyramid(self.store, tokens, cfg.L, cfg.per_level_linear)
        props = proposer.propose(self.store, pyr.flat, cfg.K)
        dec = decoder.run_decoder(self.store, props.features, pyr.flat, cfg.M,
                                  cfg.plain_sublayers, trace, rate, gen)
        preds = [heads.predict(self.store, u, tokens) for u in dec.layer_outputs]
        return ForwardResult(tokens, pyr, SpanIndexMap(len(sent), cfg.L), props, dec, preds)

    def loss(self, sent: EncodedSentence, result: ForwardResult) -> LossBreakdown:
        return total_loss(result.layer_preds, result.proposals.span_dists, sent.gold,
                          len(sent), self.config.L, self.weights, self.config.null_weight)

    def predict(self, sent: EncodedSentence, context: torch.Tensor | None = None
                ) -> list[tuple[int, int, int, float]]:
        with torch.no_grad():
            return heads.decode_predictions(self.forward(sent, context).final)

    def propose_only(self, sent: EncodedSentence, context: torch.Tensor | None = None
                     ) -> list[tuple[int, int, int]]:
        """Span-level argmax decode of the propose stage alone."""
        with torch.no_grad():
            result = self.forward(sent, context)
        return proposer.decode_spans(result.proposals.span_dists, result.index)
