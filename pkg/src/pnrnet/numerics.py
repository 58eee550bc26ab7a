"""Small differentiable kernel shared by every model component.

Tensors are float64 torch tensors; gradients come from torch autograd and are
checked against central finite differences by :func:`grad_check`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
import torch

DTYPE = torch.float64


class ConfigError(ValueError):
    """Raised when tensor widths disagree with a registered parameter."""


class NumericError(ArithmeticError):
    """Raised when a loss or activation becomes non-finite."""


class ParameterStore:
    """Named float64 parameters with stable (insertion) order.

    Gradient buffers live on the tensors themselves (``tensor.grad``) and always
    share the parameter shape.
    """

    def __init__(self, seed: int = 0):
        self._params: dict[str, torch.Tensor] = {}
        self._heads: dict[str, int] = {}
        self._gen = torch.Generator().manual_seed(seed)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> torch.Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise ConfigError(f"unknown parameter {name!r}") from None

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, torch.Tensor]]:
        return iter(self._params.items())

    def tensors(self) -> list[torch.Tensor]:
        return list(self._params.values())

    def num_values(self) -> int:
        return sum(p.numel() for p in self._params.values())

    def add(self, name: str, shape: tuple[int, ...], fan_in: int | None = None,
            init: str = "uniform") -> torch.Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter {name!r}")
        if init == "uniform":
            bound = 1.0 / math.sqrt(fan_in if fan_in else shape[0])
            value = (torch.rand(shape, generator=self._gen, dtype=DTYPE) * 2 - 1) * bound
        elif init == "zeros":
            value = torch.zeros(shape, dtype=DTYPE)
        elif init == "ones":
            value = torch.ones(shape, dtype=DTYPE)
        elif init == "normal":
            value = torch.randn(shape, generator=self._gen, dtype=DTYPE) * 0.1
        else:
            raise ConfigError(f"unknown init {init!r}")
        value.requires_grad_(True)
        self._params[name] = value
        return value

    def add_linear(self, name: str, n_in: int, n_out: int, bias: bool = True) -> None:
        self.add(f"{name}.weight", (n_in, n_out), fan_in=n_in)
        if bias:
            self.add(f"{name}.bias", (n_out,), fan_in=n_in)

    def add_layer_norm(self, name: str, width: int) -> None:
        self.add(f"{name}.gain", (width,), init="ones")
        self.add(f"{name}.bias", (width,), init="zeros")

    def add_attention(self, name: str, d: int, heads: int) -> None:
        if heads < 1 or d % heads:
            raise ConfigError(f"{name}: width {d} not divisible by {heads} heads")
        self.add_linear(f"{name}.q", d, d)
        # key bias shifts every score of a query equally, so softmax cancels it
        self.add_linear(f"{name}.k", d, d, bias=False)
        self.add_linear(f"{name}.v", d, d)
        self.add_linear(f"{name}.o", d, d)
        self._heads[name] = heads

    def heads(self, name: str) -> int:
        try:
            return self._heads[name]
        except KeyError:
            raise ConfigError(f"no attention block registered as {name!r}") from None

    def add_lstm(self, name: str, n_in: int, hidden: int) -> None:
        for direction in ("fw", "bw"):
            self.add(f"{name}.{direction}.w_ih", (n_in, 4 * hidden), fan_in=hidden)
            self.add(f"{name}.{direction}.w_hh", (hidden, 4 * hidden), fan_in=hidden)
            self.add(f"{name}.{direction}.bias", (4 * hidden,), fan_in=hidden)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.detach().numpy().copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ConfigError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        with torch.no_grad():
            for k, p in self._params.items():
                value = torch.as_tensor(np.asarray(state[k]), dtype=DTYPE)
                if value.shape != p.shape:
                    raise ConfigError(f"{k}: shape {tuple(value.shape)} != {tuple(p.shape)}")
                p.copy_(value)


def as_matrix(values) -> torch.Tensor:
    t = torch.as_tensor(values, dtype=DTYPE)
    return t.reshape(1, -1) if t.dim() == 1 else t


def linear(store: ParameterStore, name: str, x: torch.Tensor) -> torch.Tensor:
    """``x @ W + b`` with the weight registered under ``name``."""
    w = store[f"{name}.weight"]
    if x.shape[-1] != w.shape[0]:
        raise ConfigError(f"{name}: input width {x.shape[-1]} != expected {w.shape[0]}")
    out = x @ w
    bias_name = f"{name}.bias"
    if bias_name in store:
        out = out + store[bias_name]
    return out


def softmax(v: torch.Tensor, dim: int = -1) -> torch.Tensor:
    if v.numel() == 0 or v.shape[dim] == 0:
        raise ValueError("softmax of an empty vector")
    shifted = v - v.max(dim=dim, keepdim=True).values.detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=dim, keepdim=True)


def layer_norm(store: ParameterStore, name: str, x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * store[f"{name}.gain"] + store[f"{name}.bias"]


def dropout(x: torch.Tensor, rate: float, gen: torch.Generator | None) -> torch.Tensor:
    """Inverted dropout; identity when ``gen`` is None (eval / grad check)."""
    if gen is None or rate <= 0.0:
        return x
    keep = (torch.rand(x.shape, generator=gen, dtype=DTYPE) >= rate).to(DTYPE)
    return x * keep / (1.0 - rate)


def multi_head_attention(store: ParameterStore, name: str, queries: torch.Tensor,
                         keys: torch.Tensor, values: torch.Tensor
                         ) -> tuple[torch.Tensor, torch.Tensor]:
    """Scaled dot-product attention over ``heads`` subspaces.

    Returns the projected output (rows of ``queries`` x d) and the attention
    weights with shape (heads, n_queries, n_keys).
    """
    if keys.shape[0] != values.shape[0]:
        raise ConfigError(f"{name}: {keys.shape[0]} keys but {values.shape[0]} values")
    heads = store.heads(name)
    d = store[f"{name}.q.weight"].shape[1]
    dh = d // heads
    q = linear(store, f"{name}.q", queries).reshape(-1, heads, dh).transpose(0, 1)
    k = linear(store, f"{name}.k", keys).reshape(-1, heads, dh).transpose(0, 1)
    v = linear(store, f"{name}.v", values).reshape(-1, heads, dh).transpose(0, 1)
    weights = softmax(q @ k.transpose(1, 2) / math.sqrt(dh), dim=-1)
    mixed = (weights @ v).transpose(0, 1).reshape(-1, d)
    return linear(store, f"{name}.o", mixed), weights


def _scan(pre: torch.Tensor, w_hh: torch.Tensor, mask: torch.Tensor | None):
    """Run stacked LSTM directions over time.

    pre: (T, D, B, 4H) input projections incl. bias; w_hh: (D, H, 4H);
    mask: (T, B) with 1 where a step is real. Returns per-step hidden states
    (T, D, B, H) and the final hidden state (D, B, H).
    """
    steps, n_dir, batch, four_h = pre.shape
    hidden = four_h // 4
    h = pre.new_zeros(n_dir, batch, hidden)
    c = pre.new_zeros(n_dir, batch, hidden)
    outputs = []
    for t in range(steps):
        gates = pre[t] + torch.bmm(h, w_hh)
        i, f, g, o = gates.split(hidden, dim=-1)
        c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_new = torch.sigmoid(o) * torch.tanh(c_new)
        if mask is not None:
            m = mask[t].reshape(1, batch, 1)
            c_new = m * c_new + (1 - m) * c
            h_new = m * h_new + (1 - m) * h
        h, c = h_new, c_new
        outputs.append(h)
    return torch.stack(outputs), h


def _lstm_params(store: ParameterStore, name: str):
    w_ih = torch.stack([store[f"{name}.fw.w_ih"], store[f"{name}.bw.w_ih"]])
    w_hh = torch.stack([store[f"{name}.fw.w_hh"], store[f"{name}.bw.w_hh"]])
    bias = torch.stack([store[f"{name}.fw.bias"], store[f"{name}.bw.bias"]])
    return w_ih, w_hh, bias


def bilstm(store: ParameterStore, name: str, sequence: torch.Tensor) -> torch.Tensor:
    """Per-token ``[forward; backward]`` hidden states, shape N x 2H."""
    if sequence.dim() != 2 or sequence.shape[0] < 1:
        raise ConfigError(f"{name}: expected a non-empty N x width sequence")
    w_ih, w_hh, bias = _lstm_params(store, name)
    if sequence.shape[1] != w_ih.shape[1]:
        raise ConfigError(f"{name}: input width {sequence.shape[1]} != expected {w_ih.shape[1]}")
    both = torch.stack([sequence, sequence.flip(0)])             # (2, N, in)
    pre = (torch.bmm(both, w_ih) + bias[:, None, :]).transpose(0, 1)  # (N, 2, 4H)
    states, _ = _scan(pre.unsqueeze(2), w_hh, None)
    forward = states[:, 0, 0]
    backward = states[:, 1, 0].flip(0)
    return torch.cat([forward, backward], dim=-1)


def bilstm_final(store: ParameterStore, name: str, padded: torch.Tensor,
                 lengths: list[int]) -> torch.Tensor:
    """Final forward/backward states for a batch of variable-length sequences.

    padded: (B, T, in). A zero-length sequence yields a zero vector.
    Returns (B, 2H).
    """
    w_ih, w_hh, bias = _lstm_params(store, name)
    batch, steps, _ = padded.shape
    hidden = w_hh.shape[1]
    if steps == 0:
        return padded.new_zeros(batch, 2 * hidden)
    rev_index = torch.zeros(batch, steps, dtype=torch.long)
    mask = torch.zeros(steps, batch, dtype=DTYPE)
    for b, n in enumerate(lengths):
        if n:
            rev_index[b, :n] = torch.arange(n - 1, -1, -1)
            rev_index[b, n:] = torch.arange(n, steps)
            mask[:n, b] = 1.0
        else:
            rev_index[b] = torch.arange(steps)
    reversed_ = torch.gather(padded, 1, rev_index.unsqueeze(-1).expand_as(padded))
    both = torch.stack([padded, reversed_])                       # (2, B, T, in)
    pre = torch.einsum("dbti,dio->tdbo", both, w_ih) + bias[None, :, None, :]
    _, final = _scan(pre, w_hh, mask)
    return torch.cat([final[0], final[1]], dim=-1)


# Discrete decisions (ReLU masks, top-K picks, matchings) seen during a forward
# pass; only collected inside ``record_decisions`` so training pays nothing.
_decisions: list | None = None


class record_decisions:
    """Collect every discrete decision made while the block runs."""

    def __enter__(self) -> list:
        global _decisions
        self._saved = _decisions
        _decisions = []
        return _decisions

    def __exit__(self, *exc) -> None:
        global _decisions
        _decisions = self._saved


def note_decision(value) -> None:
    if _decisions is not None:
        _decisions.append(value)


def relu(x: torch.Tensor) -> torch.Tensor:
    if _decisions is not None:
        _decisions.append((x.detach() > 0).numpy().tobytes())
    return torch.relu(x)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_parameter: str
    worst_index: tuple[int, ...]
    coordinates: int
    # coordinates rejected because a perturbation crossed a non-differentiable point
    excluded: int = 0


def _evaluate(loss_fn) -> tuple[np.ndarray, list]:
    with record_decisions() as seen:
        value = loss_fn()
    terms = value.detach().reshape(-1).numpy().astype(np.float64)
    return terms, seen


def grad_check(loss_fn: Callable[[], torch.Tensor], store: ParameterStore,
               eps: float = 1e-3, n_coords: int = 200, seed: int = 0,
               max_attempts: int | None = None) -> GradCheckReport:
    """Compare autograd gradients with central differences.

    ``loss_fn`` returns the loss, or a vector of additive loss terms whose sum
    is the loss; differences are then taken term by term, which keeps rounding
    noise far below the size of a single term. Coordinates are drawn
    round-robin across parameter tensors so small tensors are not drowned out by
    embedding tables. A coordinate is redrawn when the perturbed passes take a
    different discrete decision than the unperturbed one. Relative error uses
    the denominator ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps={eps} outside [1e-7, 1e-3]")
    store.zero_grad()
    with record_decisions() as base_decisions:
        loss = loss_fn()
    if not torch.all(torch.isfinite(loss)):
        raise NumericError("non-finite loss before perturbation")
    loss.sum().backward()
    names = store.names()
    analytic = {n: (store[n].grad.detach().clone() if store[n].grad is not None
                    else torch.zeros_like(store[n])) for n in names}
    store.zero_grad()

    rng = np.random.default_rng(seed)
    order = [names[j] for j in rng.permutation(len(names))]
    max_attempts = max_attempts if max_attempts is not None else 20 * n_coords
    worst = (0.0, order[0], 0)
    checked = excluded = attempts = 0
    with torch.no_grad():
        while checked < n_coords:
            if attempts >= max_attempts:
                raise NumericError(
                    f"only {checked} of {n_coords} coordinates were differentiable after {attempts} draws")
            name = order[attempts % len(order)]
            attempts += 1
            flat = int(rng.integers(store[name].numel()))
            view = store[name].view(-1)
            original = view[flat].item()
            view[flat] = original + eps
            up, up_decisions = _evaluate(loss_fn)
            view[flat] = original - eps
            down, down_decisions = _evaluate(loss_fn)
            view[flat] = original
            if not (np.all(np.isfinite(up)) and np.all(np.isfinite(down))):
                raise NumericError(f"non-finite loss when perturbing {name}[{flat}]")
            if up_decisions != base_decisions or down_decisions != base_decisions:
                excluded += 1
                continue
            checked += 1
            numeric = float(np.sum(up - down)) / (2 * eps)
            exact = analytic[name].view(-1)[flat].item()
            err = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
            if err >= worst[0]:
                worst = (err, name, flat)
    err, name, flat = worst
    index = tuple(int(i) for i in np.unravel_index(flat, tuple(store[name].shape)))
    return GradCheckReport(err, name, index, checked, excluded)
