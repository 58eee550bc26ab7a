"""Training objective: span proposal loss and the Hungarian-matched set loss."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .heads import PredictionSet
from .numerics import note_decision
from .pyramid import SpanIndexMap

PROB_FLOOR = 1e-12

# gold mention as (left, right, type_id), inclusive boundaries; None pads the set
Gold = tuple[int, int, int]


@dataclass
class LossWeights:
    cls: float = 1.0
    boundary: float = 1.0

    def __post_init__(self):
        if not (self.cls > 0 and self.boundary > 0):
            raise ValueError(f"loss weights must be positive, got cls={self.cls}, boundary={self.boundary}")


@dataclass
class Assignment:
    # gold slot k -> prediction slot
    mapping: list[int]
    total_cost: float


@dataclass
class LossBreakdown:
    proposal: torch.Tensor
    refine: list[torch.Tensor]
    total: torch.Tensor
    assignments: list[Assignment] = field(default_factory=list)
    # every additive term of ``total``; used by the finite-difference oracle
    terms: torch.Tensor | None = None

    def as_floats(self) -> dict:
        return {"proposal_loss": float(self.proposal),
                "refine_losses": [float(r) for r in self.refine],
                "total": float(self.total)}


def _nll(p: torch.Tensor) -> torch.Tensor:
    return -torch.log(torch.clamp(p, min=PROB_FLOOR))


def span_targets(gold: list[Gold], index: SpanIndexMap, null: int) -> list[int]:
    targets = [null] * len(index)
    for left, right, c in gold:
        length = right - left + 1
        if length <= index.levels:
            targets[index.flat(length, left)] = c
    return targets


def proposal_terms(span_dists: torch.Tensor, gold: list[Gold], n: int, limit: int,
                   null_weight: float = 1.0) -> torch.Tensor:
    """Per-span negative log-likelihood of the gold type (or null)."""
    index = SpanIndexMap(n, limit)
    if span_dists.shape[0] != len(index):
        raise ValueError(f"{span_dists.shape[0]} span distributions for {len(index)} spans")
    null = span_dists.shape[1] - 1
    targets = torch.tensor(span_targets(gold, index, null), dtype=torch.long)
    nll = _nll(span_dists.gather(1, targets[:, None]).squeeze(1))
    if null_weight != 1.0:
        w = torch.where(targets == null, torch.tensor(null_weight, dtype=nll.dtype), torch.ones_like(nll))
        nll = nll * w
    return nll


def proposal_loss(span_dists: torch.Tensor, gold: list[Gold], n: int, limit: int,
                  null_weight: float = 1.0) -> torch.Tensor:
    """Cross-entropy of every enumerated span against its gold type (or null)."""
    return proposal_terms(span_dists, gold, n, limit, null_weight).sum()


def match_cost(gold: Gold | None, p_cls, p_left, p_right) -> float:
    """Negative summed probabilities of the gold class and boundaries; 0 for a null slot."""
    if gold is None:
        return 0.0
    left, right, c = gold
    return -(float(p_cls[c]) + float(p_left[left]) + float(p_right[right]))


def cost_matrix(gold: list[Gold | None], preds: PredictionSet) -> np.ndarray:
    cls = preds.cls.detach().numpy()
    left = preds.left.detach().numpy()
    right = preds.right.detach().numpy()
    cost = np.zeros((len(gold), len(preds)))
    for k, g in enumerate(gold):
        if g is not None:
            lo, hi, c = g
            cost[k] = -(cls[:, c] + left[:, lo] + right[:, hi])
    return cost


def hungarian(cost) -> Assignment:
    """Minimum-cost perfect matching of a square matrix (shortest augmenting paths).

    Row i is assigned to column ``mapping[i]``.
    """
    a = np.asarray(cost, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("cost matrix contains non-finite entries")
    n = a.shape[0]
    # 1-based potentials; column 0 is a virtual source
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used
            free[0] = False
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            candidates = np.where(free, minv, np.inf)
            j1 = int(np.argmin(candidates))
            delta = candidates[j1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    mapping = [0] * n
    for j in range(1, n + 1):
        mapping[owner[j] - 1] = j - 1
    total = 0.0
    for k in range(n):
        total += a[k, mapping[k]]
    return Assignment(mapping, float(total))


def pad_gold(gold: list[Gold], k: int) -> list[Gold | None]:
    if len(gold) > k:
        raise ValueError(f"{len(gold)} gold mentions exceed K={k} prediction slots")
    return list(gold) + [None] * (k - len(gold))


def refine_terms(assignment: list[int], gold: list[Gold | None], preds: PredictionSet,
                 weights: LossWeights) -> torch.Tensor:
    """Weighted negative log-likelihoods under a fixed gold-to-prediction mapping."""
    null = preds.cls.shape[1] - 1
    slots = torch.tensor(assignment, dtype=torch.long)
    classes = torch.tensor([null if g is None else g[2] for g in gold], dtype=torch.long)
    parts = [weights.cls * _nll(preds.cls[slots, classes])]
    real = [(k, g) for k, g in enumerate(gold) if g is not None]
    if real:
        idx = torch.tensor([assignment[k] for k, _ in real], dtype=torch.long)
        lefts = torch.tensor([g[0] for _, g in real], dtype=torch.long)
        rights = torch.tensor([g[1] for _, g in real], dtype=torch.long)
        parts.append(weights.boundary * _nll(preds.left[idx, lefts]))
        parts.append(weights.boundary * _nll(preds.right[idx, rights]))
    return torch.cat(parts)


def loss_under(assignment: list[int], gold: list[Gold | None], preds: PredictionSet,
               weights: LossWeights) -> torch.Tensor:
    """Set loss for a fixed gold-to-prediction mapping."""
    return refine_terms(assignment, gold, preds, weights).sum()


def refine_loss(gold: list[Gold], preds: PredictionSet, weights: LossWeights | None = None
                ) -> tuple[torch.Tensor, Assignment]:
    """Set loss after matching the null-padded gold set to the K predictions."""
    terms, assignment = _matched_terms(gold, preds, weights or LossWeights())
    return terms.sum(), assignment


def _matched_terms(gold: list[Gold], preds: PredictionSet, weights: LossWeights):
    padded = pad_gold(gold, len(preds))
    assignment = hungarian(cost_matrix(padded, preds))
    # null rows are interchangeable; only the slots taken by real gold matter
    note_decision(("match", tuple(assignment.mapping[:len(gold)])))
    return refine_terms(assignment.mapping, padded, preds, weights), assignment


def total_loss(layer_preds: list[PredictionSet], span_dists: torch.Tensor, gold: list[Gold],
               n: int, limit: int, weights: LossWeights | None = None,
               null_weight: float = 1.0) -> LossBreakdown:
    """Proposal loss plus an independently matched set loss for every decoder layer."""
    weights = weights or LossWeights()
    proposal_parts = proposal_terms(span_dists, gold, n, limit, null_weight)
    parts = [proposal_parts]
    proposal = proposal_parts.sum()
    refine, assignments = [], []
    for preds in layer_preds:
        terms, assignment = _matched_terms(gold, preds, weights)
        parts.append(terms)
        refine.append(terms.sum())
        assignments.append(assignment)
    total = proposal
    for r in refine:
        total = total + r
    return LossBreakdown(proposal, refine, total, assignments, torch.cat(parts))
