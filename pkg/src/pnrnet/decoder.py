"""Refine stage: a stack of decoder layers over the proposals."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import torch

from .numerics import ParameterStore, dropout, layer_norm, linear, multi_head_attention, relu
from .pyramid import SpanIndexMap


class TraceMissing(RuntimeError):
    pass


def default_heads(d: int) -> int:
    if d >= 64:
        return 8
    return max(h for h in range(1, 9) if d % h == 0)


@dataclass
class LayerTrace:
    self_attn: torch.Tensor     # heads x K x K
    cross_attn: torch.Tensor    # heads x K x c


@dataclass
class DecoderOutput:
    layer_outputs: list[torch.Tensor]
    traces: list[LayerTrace] | None = field(default=None)


def register(store: ParameterStore, d: int, layers: int, heads: int,
             ffn_dim: int, plain: bool = False) -> None:
    for m in range(layers):
        p = f"decoder.{m}"
        store.add_attention(f"{p}.self", d, heads)
        store.add_attention(f"{p}.cross", d, heads)
        store.add_linear(f"{p}.ffn.in", d, ffn_dim)
        store.add_linear(f"{p}.ffn.out", ffn_dim, d)
        if not plain:
            for sub in ("self", "cross", "ffn"):
                store.add_layer_norm(f"{p}.{sub}.norm", d)


def decoder_layer(store: ParameterStore, prev: torch.Tensor, spans: torch.Tensor, layer: int,
                  plain: bool = False, rate: float = 0.0, gen: torch.Generator | None = None
                  ) -> tuple[torch.Tensor, LayerTrace]:
    """Self-attention, cross-attention over span features, feed-forward.

    With ``plain`` the sublayers are chained bare; otherwise each one gets a
    residual connection followed by layer normalisation.
    """
    p = f"decoder.{layer}"

    def wrap(sub: str, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        if plain:
            return y
        return layer_norm(store, f"{p}.{sub}.norm", x + dropout(y, rate, gen))

    sa, w_self = multi_head_attention(store, f"{p}.self", prev, prev, prev)
    u_sa = wrap("self", prev, sa)
    ca, w_cross = multi_head_attention(store, f"{p}.cross", u_sa, spans, spans)
    u_ca = wrap("cross", u_sa, ca)
    ff = linear(store, f"{p}.ffn.out", relu(linear(store, f"{p}.ffn.in", u_ca)))
    return wrap("ffn", u_ca, ff), LayerTrace(w_self, w_cross)


def run_decoder(store: ParameterStore, queries: torch.Tensor, spans: torch.Tensor, layers: int,
                plain: bool = False, trace: bool = False, rate: float = 0.0,
                gen: torch.Generator | None = None) -> DecoderOutput:
    if layers < 1:
        raise ValueError("the decoder needs at least one layer")
    outputs, traces = [], []
    u = queries
    for m in range(layers):
        u, t = decoder_layer(store, u, spans, m, plain, rate, gen)
        outputs.append(u)
        traces.append(LayerTrace(t.self_attn.detach(), t.cross_attn.detach()))
    return DecoderOutput(outputs, traces if trace else None)


def export_attention(traces: list[LayerTrace] | None, layer: int, head: int,
                     index: SpanIndexMap, tokens: list[str]) -> dict:
    """Cross-attention of one head, per proposal, labelled by span and sorted by weight.

    ``layer`` counts from 1 (the first decoder layer); ``head`` from 0.
    """
    if traces is None:
        raise TraceMissing("attention traces were not recorded; run the decoder with trace=True")
    if not 1 <= layer <= len(traces):
        raise IndexError(f"layer {layer} outside 1..{len(traces)}")
    weights = traces[layer - 1].cross_attn
    if not 0 <= head < weights.shape[0]:
        raise IndexError(f"head {head} outside 0..{weights.shape[0] - 1}")
    proposals = []
    for row in weights[head].tolist():
        entries = []
        for flat_index, w in enumerate(row):
            length, start = index.span(flat_index)
            entries.append({"length": length, "start": start,
                            "text": " ".join(tokens[start:start + length]), "weight": w})
        entries.sort(key=lambda e: -e["weight"])
        proposals.append(entries)
    return {"layer": layer, "head": head, "proposals": proposals}


def write_attention(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False, indent=1)
