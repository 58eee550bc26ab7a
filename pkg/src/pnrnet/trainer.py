"""Deterministic per-sentence training, checkpoints and inference."""
from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .data import DataError, Entity, Sentence, Vocabulary, build_vocab, encode_sentence
from .metrics import evaluate
from .model import PnRNet
from .numerics import NumericError

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: Vocabulary
    params: dict[str, np.ndarray]
    epoch: int = 0
    dev_f1: float = 0.0
    history: list[dict] = field(default_factory=list)
    format_version: int = CHECKPOINT_FORMAT_VERSION

    def model(self) -> PnRNet:
        model = PnRNet(self.config, self.vocab)
        model.store.load_state_dict(self.params)
        return model

    def to_json(self) -> dict:
        return {
            "format_version": self.format_version,
            "config": self.config.to_json(),
            "vocab": self.vocab.to_json(),
            "params": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
                       for k, v in self.params.items()},
            "epoch": self.epoch,
            "dev_f1": self.dev_f1,
            "history": self.history,
        }

    @classmethod
    def from_json(cls, doc: dict) -> Checkpoint:
        version = doc.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint format version {version} is not supported (expected {CHECKPOINT_FORMAT_VERSION})")
        params = {k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"])
                  for k, v in doc["params"].items()}
        return cls(TrainConfig.from_json(doc["config"]), Vocabulary.from_json(doc["vocab"]),
                   params, doc["epoch"], doc["dev_f1"], doc.get("history", []), version)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> Checkpoint:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: not a checkpoint ({exc.msg})") from None
        return cls.from_json(doc)


def snapshot(model: PnRNet, epoch: int, dev_f1: float, history: list[dict]) -> Checkpoint:
    return Checkpoint(model.config, model.vocab, model.store.state_dict(), epoch, dev_f1, list(history))


def predict(model: PnRNet | Checkpoint, corpus: list[Sentence],
            contexts: list[torch.Tensor] | None = None) -> list[Sentence]:
    """Decoded final-layer mentions for every sentence, with confidences."""
    if isinstance(model, Checkpoint):
        model = model.model()
    names = model.vocab.type_names()
    out = []
    for i, s in enumerate(corpus):
        enc = encode_sentence(s, model.vocab)
        ctx = contexts[i] if contexts is not None else None
        mentions = model.predict(enc, ctx)
        ents = [Entity(lo, hi - lo + 1, names[c], conf) for lo, hi, c, conf in mentions]
        out.append(Sentence(list(s.tokens), ents, list(s.pos) if s.pos is not None else None))
    return out


def dev_score(model: PnRNet, corpus: list[Sentence], contexts=None) -> float:
    if not corpus:
        return 0.0
    return evaluate(corpus, predict(model, corpus, contexts)).f1


def train(config: TrainConfig, train_corpus: list[Sentence], dev_corpus: list[Sentence],
          vocab: Vocabulary | None = None, log_path=None,
          train_contexts: list[torch.Tensor] | None = None,
          dev_contexts: list[torch.Tensor] | None = None) -> Checkpoint:
    """Train with Adam on one sentence per update; return the best-on-dev checkpoint."""
    if not train_corpus:
        raise DataError("training corpus is empty")
    vocab = vocab or build_vocab(train_corpus)
    encoded = [encode_sentence(s, vocab) for s in train_corpus]
    for i, enc in enumerate(encoded):
        if len(enc.gold) > config.K:
            raise DataError(f"training sentence {i} has {len(enc.gold)} entities but K={config.K}")
    model = PnRNet(config, vocab)
    optimizer = torch.optim.Adam(model.store.tensors(), lr=config.learning_rate)
    order_rng = random.Random(config.seed)
    dropout_gen = torch.Generator().manual_seed(config.seed + 1)
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None

    history: list[dict] = []
    best = snapshot(model, 0, dev_score(model, dev_corpus, dev_contexts), history)
    stale = 0
    try:
        for epoch in range(1, config.epochs + 1):
            order = list(range(len(encoded)))
            order_rng.shuffle(order)
            sums = np.zeros(config.M + 1)
            for i in order:
                ctx = train_contexts[i] if train_contexts is not None else None
                optimizer.zero_grad()
                result = model.forward(encoded[i], ctx, gen=dropout_gen)
                # the matcher cannot run on NaN probabilities, so check them first
                outputs = [result.proposals.span_dists] + [
                    t for p in result.layer_preds for t in (p.cls, p.left, p.right)]
                finite = all(torch.isfinite(t).all() for t in outputs)
                losses = model.loss(encoded[i], result) if finite else None
                if losses is None or not math.isfinite(losses.total.item()):
                    raise NumericError(f"non-finite loss on training sentence {i} (epoch {epoch})")
                losses.total.backward()
                torch.nn.utils.clip_grad_norm_(model.store.tensors(), config.clip_norm)
                optimizer.step()
                sums += [losses.proposal.item()] + [r.item() for r in losses.refine]
            means = sums / len(encoded)
            dev_f1 = dev_score(model, dev_corpus, dev_contexts)
            entry = {"epoch": epoch, "proposal_loss": means[0],
                     "refine_losses": means[1:].tolist(), "dev_f1": dev_f1}
            history.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            log.info("epoch %d proposal %.4f refine %s dev_f1 %.4f", epoch, means[0],
                     " ".join(f"{x:.4f}" for x in means[1:]), dev_f1)
            if dev_f1 > best.dev_f1 or epoch == 1 and best.epoch == 0 and dev_f1 >= best.dev_f1:
                best = snapshot(model, epoch, dev_f1, history)
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    log.info("early stop after %d epochs without dev improvement", stale)
                    break
    finally:
        if log_fh:
            log_fh.close()
    best.history = list(history)
    return best
