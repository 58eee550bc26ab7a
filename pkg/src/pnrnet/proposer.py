"""Propose stage: per-span classification, entityhood and top-K selection."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .numerics import ParameterStore, linear, note_decision, softmax
from .pyramid import SpanIndexMap


@dataclass
class ProposalSet:
    indices: list[int]
    features: torch.Tensor        # K x d
    scores: torch.Tensor          # K entityhood values
    span_dists: torch.Tensor      # c x (C + 1), kept for the proposal loss


def register(store: ParameterStore, d: int, num_types: int) -> None:
    store.add_linear("proposer.cls", d, num_types + 1)


def classify_spans(store: ParameterStore, flat: torch.Tensor) -> torch.Tensor:
    return softmax(linear(store, "proposer.cls", flat), dim=-1)


def entityhood(dist: torch.Tensor) -> torch.Tensor:
    """Probability mass on real entity types (the null class is last)."""
    return dist[..., :-1].sum(dim=-1)


def select_topk(scores, k: int) -> list[int]:
    """Indices of the ``k`` best scores; ties go to the smaller index.

    When ``k`` exceeds the number of spans every span is taken once and the
    best one is repeated to fill the remaining slots.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    values = [float(s) for s in (scores.tolist() if torch.is_tensor(scores) else scores)]
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    if k <= len(order):
        return order[:k]
    return order + [order[0]] * (k - len(order))


def propose(store: ParameterStore, flat: torch.Tensor, k: int) -> ProposalSet:
    dists = classify_spans(store, flat)
    scores = entityhood(dists)
    indices = select_topk(scores.detach(), k)
    note_decision(("topk", tuple(indices)))
    picked = torch.tensor(indices, dtype=torch.long)
    return ProposalSet(indices, flat[picked], scores[picked], dists)


def decode_spans(dists: torch.Tensor, index: SpanIndexMap) -> list[tuple[int, int, int]]:
    """Span-level predictions (left, right, type_id) from argmax of every span."""
    null = dists.shape[-1] - 1
    best = dists.argmax(dim=-1).tolist()
    out = []
    for flat_index, cls in enumerate(best):
        if cls != null:
            length, start = index.span(flat_index)
            out.append((start, start + length - 1, cls))
    return out
