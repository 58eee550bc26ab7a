"""Exact-match, localisation, classification and length-bucketed F1."""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field

from .data import DataError, Sentence

# lower bounds of the length buckets 1, 2, 3, 4, 5, 6-8, 9-16, 17-
DEFAULT_EDGES = (1, 2, 3, 4, 5, 6, 9, 17)


class AlignmentError(DataError):
    pass


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _prf(tp: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    return p, r, f1_score(p, r)


@dataclass
class Bucket:
    label: str
    low: int
    high: int | None
    support: int
    predicted: int
    correct: int
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    loc_f1: float
    cls_f1: float
    gold_count: int
    pred_count: int
    correct: int
    buckets: list[Bucket] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)

    def format(self) -> str:
        lines = [
            f"precision {self.precision:.4f}",
            f"recall    {self.recall:.4f}",
            f"f1        {self.f1:.4f}",
            f"loc_f1    {self.loc_f1:.4f}",
            f"cls_f1    {self.cls_f1:.4f}",
            f"gold {self.gold_count}  predicted {self.pred_count}  correct {self.correct}",
        ]
        if self.buckets:
            lines.append(f"{'len':<6}{'support':>8}{'pred':>6}{'P':>8}{'R':>8}{'F1':>8}")
            for b in self.buckets:
                lines.append(f"{b.label:<6}{b.support:>8}{b.predicted:>6}"
                             f"{b.precision:>8.4f}{b.recall:>8.4f}{b.f1:>8.4f}")
        return "\n".join(lines)


def _keys(sentences: list[Sentence]) -> list[set[tuple[int, int, str]]]:
    return [{e.key for e in s.entities} for s in sentences]


def _check_aligned(gold: list[Sentence], pred: list[Sentence]) -> None:
    if len(gold) != len(pred):
        raise AlignmentError(f"{len(gold)} gold sentences but {len(pred)} predicted")


def evaluate(gold: list[Sentence], pred: list[Sentence], edges=None) -> EvalReport:
    """Score predicted mentions against gold, sentence by sentence.

    A mention is correct when start, length and type all match. For
    localisation only (start, length) must match, each gold span pairing with
    at most one prediction. ``cls_f1`` is the micro-F1 of the type decision over
    the boundary-matched pairs (where precision and recall coincide).
    """
    _check_aligned(gold, pred)
    n_gold = n_pred = tp = loc_tp = cls_tp = 0
    for g_keys, p_keys in zip(_keys(gold), _keys(pred)):
        n_gold += len(g_keys)
        n_pred += len(p_keys)
        tp += len(g_keys & p_keys)
        g_spans = Counter((s, n) for s, n, _ in g_keys)
        p_spans = Counter((s, n) for s, n, _ in p_keys)
        loc_tp += sum((g_spans & p_spans).values())
        # a span matched on boundaries counts as correctly classified when one of
        # the predictions on it carries a gold type for that span
        for span in g_spans & p_spans:
            g_types = Counter(t for s, n, t in g_keys if (s, n) == span)
            p_types = Counter(t for s, n, t in p_keys if (s, n) == span)
            cls_tp += sum((g_types & p_types).values())
    p, r, f1 = _prf(tp, n_pred, n_gold)
    _, _, loc_f1 = _prf(loc_tp, n_pred, n_gold)
    cls_f1 = cls_tp / loc_tp if loc_tp else 0.0
    buckets = length_buckets(gold, pred, edges) if edges is not None else []
    return EvalReport(p, r, f1, loc_f1, cls_f1, n_gold, n_pred, tp, buckets)


def bucket_label(low: int, high: int | None) -> str:
    if high is None:
        return f"{low}-"
    return str(low) if low == high else f"{low}-{high}"


def length_buckets(gold: list[Sentence], pred: list[Sentence], edges=DEFAULT_EDGES) -> list[Bucket]:
    """Per-length-range F1; a prediction falls in the bucket of its own length."""
    edges = tuple(DEFAULT_EDGES if edges is None else edges)
    if not edges or any(b <= a for a, b in zip(edges, edges[1:])) or edges[0] < 1:
        raise ValueError(f"bucket edges must be positive and strictly increasing: {edges}")
    _check_aligned(gold, pred)
    ranges = [(lo, edges[i + 1] - 1 if i + 1 < len(edges) else None) for i, lo in enumerate(edges)]

    def bucket_of(length: int) -> int | None:
        for i, (lo, hi) in enumerate(ranges):
            if length >= lo and (hi is None or length <= hi):
                return i
        return None

    support = [0] * len(ranges)
    predicted = [0] * len(ranges)
    correct = [0] * len(ranges)
    for g_keys, p_keys in zip(_keys(gold), _keys(pred)):
        for key in g_keys:
            i = bucket_of(key[1])
            if i is not None:
                support[i] += 1
                if key in p_keys:
                    correct[i] += 1
        for key in p_keys:
            i = bucket_of(key[1])
            if i is not None:
                predicted[i] += 1
    out = []
    for i, (lo, hi) in enumerate(ranges):
        p, r, f1 = _prf(correct[i], predicted[i], support[i])
        out.append(Bucket(bucket_label(lo, hi), lo, hi, support[i], predicted[i], correct[i], p, r, f1))
    return out
