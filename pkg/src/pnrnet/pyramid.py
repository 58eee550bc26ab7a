"""Bottom-up span features and their level-major multi-scale flattening."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .numerics import ParameterStore, linear


def effective_limit(n: int, limit: int) -> int:
    return min(limit, n)


def span_count(n: int, limit: int) -> int:
    """Number of enumerated spans, (2N - L + 1) * L / 2 with L clamped to N."""
    k = effective_limit(n, limit)
    return (2 * n - k + 1) * k // 2


class SpanIndexMap:
    """Bijection between (length, start) spans and rows of the flattened matrix.

    Rows are ordered level-major, start-ascending: all 1-grams first, then
    all 2-grams, and so on.
    """

    def __init__(self, n: int, limit: int):
        if n < 1 or limit < 1:
            raise ValueError(f"need N >= 1 and L >= 1, got N={n}, L={limit}")
        self.n = n
        self.levels = effective_limit(n, limit)
        self._offsets = [0]
        for length in range(1, self.levels + 1):
            self._offsets.append(self._offsets[-1] + n - length + 1)

    def __len__(self) -> int:
        return self._offsets[-1]

    def flat(self, length: int, start: int) -> int:
        if not 1 <= length <= self.levels or not 0 <= start <= self.n - length:
            raise IndexError(f"span (length={length}, start={start}) outside N={self.n}, L={self.levels}")
        return self._offsets[length - 1] + start

    def span(self, index: int) -> tuple[int, int]:
        if not 0 <= index < len(self):
            raise IndexError(f"flat index {index} outside [0, {len(self)})")
        length = 1
        while self._offsets[length] <= index:
            length += 1
        return length, index - self._offsets[length - 1]

    def spans(self) -> list[tuple[int, int]]:
        return [(length, i) for length in range(1, self.levels + 1)
                for i in range(self.n - length + 1)]


def span_index_maps(n: int, limit: int) -> SpanIndexMap:
    return SpanIndexMap(n, limit)


@dataclass
class SpanPyramid:
    levels: list[torch.Tensor]
    flat: torch.Tensor

    @property
    def n(self) -> int:
        return self.levels[0].shape[0]

    @property
    def depth(self) -> int:
        return len(self.levels)


def register(store: ParameterStore, d: int, limit: int, per_level: bool = False) -> None:
    if per_level:
        for length in range(2, limit + 1):
            store.add_linear(f"pyramid.{length}", 2 * d, d)
    else:
        store.add_linear("pyramid", 2 * d, d)


def build_pyramid(store: ParameterStore, tokens: torch.Tensor, limit: int,
                  per_level: bool = False) -> SpanPyramid:
    """h[l, i] = Linear([h[l-1, i]; h[l-1, i+1]]) for l > 1, h[1, i] = x_i."""
    levels = [tokens]
    for length in range(2, effective_limit(tokens.shape[0], limit) + 1):
        prev = levels[-1]
        pairs = torch.cat([prev[:-1], prev[1:]], dim=-1)
        levels.append(linear(store, f"pyramid.{length}" if per_level else "pyramid", pairs))
    return SpanPyramid(levels, flatten_multiscale(levels))


def flatten_multiscale(levels) -> torch.Tensor:
    if isinstance(levels, SpanPyramid):
        levels = levels.levels
    return torch.cat(list(levels), dim=0)
