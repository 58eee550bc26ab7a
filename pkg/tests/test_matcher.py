import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from pnrnet.heads import PredictionSet
from pnrnet.matcher import (
    LossWeights, cost_matrix, hungarian, loss_under, match_cost, pad_gold, proposal_loss, refine_loss,
    span_targets, total_loss,
)
from pnrnet.pyramid import SpanIndexMap


def brute_force(cost):
    n = len(cost)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        total = 0.0
        for k in range(n):
            total += cost[k][perm[k]]
        best = min(best, total)
    return best


def as_t(x):
    return torch.tensor(x, dtype=torch.float64)


def random_preds(gen, k, n, types):
    return PredictionSet(torch.softmax(torch.randn(k, types + 1, generator=gen, dtype=torch.float64), 1),
                         torch.softmax(torch.randn(k, n, generator=gen, dtype=torch.float64), 1),
                         torch.softmax(torch.randn(k, n, generator=gen, dtype=torch.float64), 1))


def random_gold(rng, g, n, types):
    spans = set()
    while len(spans) < g:
        lo = int(rng.integers(n))
        spans.add((lo, int(rng.integers(lo, n)), int(rng.integers(types))))
    return sorted(spans)


def test_hungarian_examples():
    a = hungarian([[1, 2], [2, 4]])
    assert a.mapping == [1, 0] and a.total_cost == 4
    eye = 1 - np.eye(4)
    assert hungarian(eye).mapping == [0, 1, 2, 3] and hungarian(eye).total_cost == 0


@pytest.mark.parametrize("bad", [[[1, np.nan], [0, 0]], [[np.inf]], [[1, 2, 3]]])
def test_hungarian_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        hungarian(bad)


@settings(max_examples=200)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_hungarian_matches_brute_force(k, seed):
    cost = np.random.default_rng(seed).normal(size=(k, k))
    a = hungarian(cost)
    assert sorted(a.mapping) == list(range(k))
    assert a.total_cost == brute_force(cost)


@settings(max_examples=30)
@given(st.integers(8, 20), st.integers(0, 2**32 - 1))
def test_hungarian_beats_random_permutations(k, seed):
    rng = np.random.default_rng(seed)
    cost = rng.normal(size=(k, k))
    total = hungarian(cost).total_cost
    for _ in range(100):
        perm = rng.permutation(k)
        assert total <= cost[np.arange(k), perm].sum() + 1e-12


@settings(max_examples=50)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1), st.floats(-100, 100))
def test_hungarian_shift_invariant(k, seed, shift):
    cost = np.random.default_rng(seed).integers(0, 5, size=(k, k)).astype(float)
    a, b = hungarian(cost), hungarian(cost + shift)
    assert cost[np.arange(k), b.mapping].sum() == a.total_cost


@pytest.mark.parametrize("gold, probs, expected", [
    ((0, 1, 0), (0.5, 0.4, 0.3), -1.2),
    (None, (0.5, 0.4, 0.3), 0.0),
    ((0, 1, 0), (1.0, 1.0, 1.0), -3.0),
])
def test_match_cost_examples(gold, probs, expected):
    p_cls, p_l, p_r = probs
    assert match_cost(gold, as_t([p_cls, 0]), as_t([p_l, 0]), as_t([0, p_r])) == pytest.approx(expected)


def test_cost_matrix_agrees_with_match_cost():
    gen = torch.Generator().manual_seed(0)
    preds = random_preds(gen, 3, 4, 2)
    gold = [(0, 2, 1), None, (1, 1, 0)]
    cost = cost_matrix(gold, preds)
    for k, g in enumerate(gold):
        for j in range(3):
            assert cost[k, j] == pytest.approx(match_cost(g, preds.cls[j], preds.left[j], preds.right[j]))


def test_proposal_loss_perfect():
    index = SpanIndexMap(3, 2)
    targets = span_targets([(0, 1, 0)], index, 2)
    dists = torch.nn.functional.one_hot(torch.tensor(targets), 3).to(torch.float64)
    assert proposal_loss(dists, [(0, 1, 0)], 3, 2).item() == 0.0


def test_proposal_loss_uniform_single_span():
    assert abs(proposal_loss(torch.full((1, 4), 0.25, dtype=torch.float64), [], 1, 1).item()
               + math.log(0.25)) < 1e-12


def test_proposal_loss_brute_force():
    gen = torch.Generator().manual_seed(1)
    dists = torch.softmax(torch.randn(5, 3, generator=gen, dtype=torch.float64), 1)
    gold = [(1, 2, 1)]
    expected = 0.0
    row = 0
    for length in (1, 2):
        for start in range(3 - length + 1):
            target = 1 if (start, start + length - 1) == (1, 2) else 2
            expected -= math.log(dists[row, target].item())
            row += 1
    assert proposal_loss(dists, gold, 3, 2).item() == pytest.approx(expected, abs=1e-12)


def test_proposal_loss_ignores_spans_beyond_limit():
    dists = torch.full((5, 3), 1 / 3, dtype=torch.float64)
    # a length-3 mention cannot be enumerated at L=2 and leaves every target null
    assert proposal_loss(dists, [(0, 2, 0)], 3, 2).item() == pytest.approx(5 * math.log(3))


def test_probability_floor():
    dists = as_t([[1.0, 0.0]])
    assert proposal_loss(dists, [(0, 0, 0)], 1, 1).item() == 0.0
    assert proposal_loss(as_t([[0.0, 1.0]]), [(0, 0, 0)], 1, 1).item() == pytest.approx(-math.log(1e-12))


def test_refine_loss_analytic():
    preds = PredictionSet(as_t([[0.5, 0.5]]), as_t([[0.25, 0.75]]), as_t([[0.125, 0.875]]))
    loss, assignment = refine_loss([(0, 0, 0)], preds)
    assert abs(loss.item() - 6 * math.log(2)) < 1e-12
    assert assignment.mapping == [0]


def test_refine_loss_zero_when_all_null_certain():
    preds = PredictionSet(as_t([[0.0, 1.0]] * 3), as_t([[0.5, 0.5]] * 3), as_t([[0.5, 0.5]] * 3))
    assert refine_loss([], preds)[0].item() == 0.0


def test_refine_loss_weights():
    preds = PredictionSet(as_t([[0.5, 0.5]]), as_t([[0.25, 0.75]]), as_t([[0.125, 0.875]]))
    loss, _ = refine_loss([(0, 0, 0)], preds, LossWeights(2.0, 3.0))
    assert loss.item() == pytest.approx(2 * math.log(2) + 3 * 5 * math.log(2))


@pytest.mark.parametrize("cls, boundary", [(0, 1), (1, 0), (-1, 1)])
def test_loss_weights_must_be_positive(cls, boundary):
    with pytest.raises(ValueError):
        LossWeights(cls, boundary)


def test_too_many_gold_mentions():
    with pytest.raises(ValueError, match="K=1"):
        pad_gold([(0, 0, 0), (1, 1, 0)], 1)


@pytest.mark.parametrize("seed", range(20))
def test_refine_loss_uses_cost_optimal_assignment(seed):
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    preds = random_preds(gen, 3, 5, 2)
    gold = random_gold(rng, 2, 5, 2)
    padded = pad_gold(gold, 3)
    cost = cost_matrix(padded, preds)
    perms = list(itertools.permutations(range(3)))
    best_cost = min(sum(cost[k, p[k]] for k in range(3)) for p in perms)
    optimal = [p for p in perms if sum(cost[k, p[k]] for k in range(3)) <= best_cost + 1e-12]
    loss, assignment = refine_loss(gold, preds)
    assert assignment.total_cost == pytest.approx(best_cost, abs=1e-12)
    losses = [loss_under(list(p), padded, preds, LossWeights()).item() for p in optimal]
    assert any(abs(loss.item() - x) < 1e-12 for x in losses)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 6))
def test_refine_loss_permutation_invariant(seed, g):
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    preds = random_preds(gen, 6, 8, 3)
    gold = random_gold(rng, g, 8, 3)
    perm = rng.permutation(6).tolist()
    base, _ = refine_loss(gold, preds)
    shuffled, _ = refine_loss(gold, preds.permute(perm))
    assert abs(base.item() - shuffled.item()) < 1e-9
    assert base.item() >= 0


def test_total_loss_additivity():
    gen = torch.Generator().manual_seed(3)
    layers = [random_preds(gen, 4, 5, 2) for _ in range(3)]
    dists = torch.softmax(torch.randn(len(SpanIndexMap(5, 3)), 3, generator=gen, dtype=torch.float64), 1)
    gold = [(0, 1, 0), (2, 4, 1)]
    out = total_loss(layers, dists, gold, 5, 3)
    parts = [refine_loss(gold, p)[0] for p in layers]
    assert len(out.refine) == 3 and len(out.assignments) == 3
    assert out.proposal.item() == pytest.approx(proposal_loss(dists, gold, 5, 3).item(), abs=1e-12)
    assert out.total.item() == pytest.approx(out.proposal.item() + sum(p.item() for p in parts), abs=1e-12)
    assert out.terms.sum().item() == pytest.approx(out.total.item(), abs=1e-9)
    single = total_loss(layers[:1], dists, gold, 5, 3)
    assert single.total.item() == pytest.approx(single.proposal.item() + parts[0].item(), abs=1e-12)


def test_total_loss_perfect_heads():
    gold = [(0, 1, 0)]
    perfect = PredictionSet(as_t([[1, 0, 0], [0, 0, 1]]), as_t([[1, 0, 0], [1, 0, 0]]),
                            as_t([[0, 1, 0], [0, 1, 0]]))
    dists = torch.full((len(SpanIndexMap(3, 2)), 3), 1 / 3, dtype=torch.float64)
    out = total_loss([perfect, perfect], dists, gold, 3, 2)
    assert out.total.item() == out.proposal.item()
    assert out.as_floats()["refine_losses"] == [0.0, 0.0]
