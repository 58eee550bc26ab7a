"""Re-prediction of entity classes and boundaries from refined proposals."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .numerics import ParameterStore, linear, relu, softmax


@dataclass
class PredictionSet:
    cls: torch.Tensor     # K x (C + 1)
    left: torch.Tensor    # K x N
    right: torch.Tensor   # K x N

    def __len__(self) -> int:
        return self.cls.shape[0]

    def permute(self, order) -> PredictionSet:
        idx = torch.as_tensor(order, dtype=torch.long)
        return PredictionSet(self.cls[idx], self.left[idx], self.right[idx])


def register(store: ParameterStore, d: int, num_types: int) -> None:
    store.add_linear("heads.cls", d, num_types + 1)
    for side in ("left", "right"):
        store.add_linear(f"heads.{side}.hidden", 2 * d, d)
        # a shared output bias cancels in the softmax over positions
        store.add_linear(f"heads.{side}.score", d, 1, bias=False)


def classify_proposal(store: ParameterStore, u: torch.Tensor) -> torch.Tensor:
    return softmax(linear(store, "heads.cls", u), dim=-1)


def _boundary(store: ParameterStore, side: str, u: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
    # MLP over [u_k; h_j] for every (proposal, token) pair, computed without
    # materialising the K x N x 2d fused tensor
    w = store[f"heads.{side}.hidden.weight"]
    d = u.shape[-1]
    hidden = (u @ w[:d])[:, None, :] + (tokens @ w[d:])[None, :, :] + store[f"heads.{side}.hidden.bias"]
    scores = linear(store, f"heads.{side}.score", relu(hidden)).squeeze(-1)
    return softmax(scores, dim=-1)


def boundary_distributions(store: ParameterStore, u: torch.Tensor, tokens: torch.Tensor
                           ) -> tuple[torch.Tensor, torch.Tensor]:
    """Left and right boundary distributions over the N tokens, per proposal row."""
    squeeze = u.dim() == 1
    if squeeze:
        u = u[None]
    left, right = _boundary(store, "left", u, tokens), _boundary(store, "right", u, tokens)
    return (left[0], right[0]) if squeeze else (left, right)


def predict(store: ParameterStore, u: torch.Tensor, tokens: torch.Tensor) -> PredictionSet:
    left, right = boundary_distributions(store, u, tokens)
    return PredictionSet(classify_proposal(store, u), left, right)


def decode_predictions(preds: PredictionSet) -> list[tuple[int, int, int, float]]:
    """Turn a prediction set into unique (left, right, type_id, confidence) mentions.

    Null-class and inverted-boundary slots are dropped; among slots decoding to
    the same mention the one with the highest class probability wins.
    """
    cls = preds.cls.detach()
    left = preds.left.detach()
    right = preds.right.detach()
    null = cls.shape[-1] - 1
    best: dict[tuple[int, int, int], tuple[float, float]] = {}
    for k in range(cls.shape[0]):
        c = int(cls[k].argmax())
        if c == null:
            continue
        lo, hi = int(left[k].argmax()), int(right[k].argmax())
        if lo > hi:
            continue
        p_cls = float(cls[k, c])
        conf = p_cls * float(left[k, lo]) * float(right[k, hi])
        key = (lo, hi, c)
        if key not in best or p_cls > best[key][0]:
            best[key] = (p_cls, conf)
    return [(lo, hi, c, best[(lo, hi, c)][1]) for lo, hi, c in sorted(best)]
