"""Neural building blocks on top of :mod:`thermocast.tensor`.

Layers accept a leading batch axis: sequence inputs are ``(batch, seq, dim)``
or unbatched ``(seq, dim)``.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape if shape is not None else (fan_in, fan_out))


def _param(values, name: str | None = None) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


class Module:
    """Parameter container; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield prefix + attr, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{attr}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{attr}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise ContractError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ShapeError(f"{name}: stored shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = _param(glorot_uniform(rng, in_dim, out_dim))
        self.bias = _param(np.zeros(out_dim))

    def forward(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias


class ScaleNorm(Module):
    """Rescale each token vector to L2 norm ``g`` (a single learned scalar)."""

    def __init__(self, dim: int):
        self.g = _param(np.array([math.sqrt(dim)]))

    def forward(self, x: Tensor) -> Tensor:
        return T.div(x, T.l2norm(x, axis=-1, keepdims=True)) * self.g


class GluFeedForward(Module):
    """Expand ``d -> width``, gate the first half by sigmoid of the second, project back to ``d``."""

    def __init__(self, dim: int, width: int, rng: np.random.Generator):
        if width % 2:
            raise ConfigError(f"GLU width must be even, got {width}")
        self.expand = Linear(dim, width, rng)
        self.project = Linear(width // 2, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        value, gate = T.split(self.expand(x), 2, axis=-1)
        return self.project(value * T.sigmoid(gate))


class RotaryEncoder:
    """Rotate feature pairs ``(x[2j], x[2j+1])`` at position ``m`` by ``m * base**(-2j/dim)``."""

    def __init__(self, head_dim: int, base: float = 10000.0):
        if head_dim <= 0 or head_dim % 2:
            raise ConfigError(f"rotary encoding needs an even head dimension, got {head_dim}")
        self.head_dim = head_dim
        self.base = base
        self.freqs = base ** (-np.arange(0, head_dim, 2) / head_dim)
        self._cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def tables(self, length: int, offset: int = 0) -> tuple[np.ndarray, np.ndarray]:
        key = (length, offset)
        if key not in self._cache:
            angles = np.outer(np.arange(offset, offset + length), self.freqs)
            self._cache[key] = (np.repeat(np.cos(angles), 2, axis=-1), np.repeat(np.sin(angles), 2, axis=-1))
        return self._cache[key]

    def apply(self, x: Tensor, position_offset: int = 0) -> Tensor:
        if x.shape[-1] != self.head_dim:
            raise ShapeError(f"rotary encoder built for dim {self.head_dim}, got {x.shape[-1]}")
        cos, sin = self.tables(x.shape[-2], position_offset)
        out = x.data * cos + _swap_pairs(x.data) * sin

        def back(g):
            return (g * cos - _swap_pairs(g * sin),)

        return Tensor._make(out, (x,), "rope", back)


def _swap_pairs(x: np.ndarray) -> np.ndarray:
    """``(x0, x1, x2, x3, ...) -> (-x1, x0, -x3, x2, ...)``."""
    out = np.empty_like(x)
    out[..., 0::2] = -x[..., 1::2]
    out[..., 1::2] = x[..., 0::2]
    return out


def rope_apply(x: Tensor, position_offset: int = 0, base: float = 10000.0) -> Tensor:
    """Rotary encoding of a ``(..., seq, head_dim)`` tensor whose first row sits at ``position_offset``."""
    return RotaryEncoder(x.shape[-1], base).apply(x, position_offset)


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, rotary: bool = True):
        if heads <= 0 or d_model % heads:
            raise ConfigError(f"d_model {d_model} is not divisible by {heads} heads")
        self.d_model, self.heads = d_model, heads
        self.head_dim = d_model // heads
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, d_model, rng)
        self.rotary = RotaryEncoder(self.head_dim) if rotary else None
        self.last_weights: np.ndarray | None = None

    def _heads(self, x: Tensor) -> Tensor:
        b, s, _ = x.shape
        return T.swapaxes(x.reshape(b, s, self.heads, self.head_dim), 1, 2)

    def forward(self, q_src: Tensor, kv_src: Tensor, q_offset: int = 0, kv_offset: int = 0) -> Tensor:
        if q_src.shape[-1] != self.d_model or kv_src.shape[-1] != self.d_model:
            raise ShapeError(f"attention expects width {self.d_model}, got {q_src.shape} and {kv_src.shape}")
        unbatched = q_src.ndim == 2
        if unbatched:
            q_src = q_src.reshape(1, *q_src.shape)
            kv_src = kv_src.reshape(1, *kv_src.shape)
        if q_src.shape[1] < 1 or kv_src.shape[1] < 1:
            raise ShapeError("attention needs sequences of length >= 1")
        q = self._heads(self.q(q_src))
        k = self._heads(self.k(kv_src))
        v = self._heads(self.v(kv_src))
        if self.rotary is not None:
            q = self.rotary.apply(q, q_offset)
            k = self.rotary.apply(k, kv_offset)
        scores = T.matmul(q, T.transpose_last_two(k)) * (1.0 / math.sqrt(self.head_dim))
        weights = T.softmax(scores, axis=-1)
        self.last_weights = weights.data
        ctx = T.swapaxes(T.matmul(weights, v), 1, 2)
        b, s = ctx.shape[0], ctx.shape[1]
        out = self.out(ctx.reshape(b, s, self.d_model))
        return out.reshape(s, self.d_model) if unbatched else out


def attention_forward(q_src: Tensor, kv_src: Tensor, layer: MultiHeadAttention, **offsets) -> Tensor:
    return layer(q_src, kv_src, **offsets)


class EncoderBlock(Module):
    """PreNorm block: ``x + SelfAttn(Norm(x))`` then ``x + FF(Norm(x))``."""

    def __init__(self, d_model: int, heads: int, ff_width: int, rng: np.random.Generator):
        self.norm_attn = ScaleNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads, rng)
        self.norm_ff = ScaleNorm(d_model)
        self.ff = GluFeedForward(d_model, ff_width, rng)

    def forward(self, x: Tensor, offset: int = 0) -> Tensor:
        h = self.norm_attn(x)
        x = x + self.attn(h, h, offset, offset)
        return x + self.ff(self.norm_ff(x))

    def output_projections(self) -> list[Linear]:
        return [self.attn.out, self.ff.project]


class DecoderBlock(Module):
    """PreNorm block with self-attention, cross-attention to the encoder output, and GLU feed-forward."""

    def __init__(self, d_model: int, heads: int, ff_width: int, rng: np.random.Generator):
        self.norm_self = ScaleNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, heads, rng)
        self.norm_cross = ScaleNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, heads, rng)
        self.norm_ff = ScaleNorm(d_model)
        self.ff = GluFeedForward(d_model, ff_width, rng)

    def forward(self, x: Tensor, encoder_out: Tensor | None = None, offset: int = 0, encoder_offset: int = 0) -> Tensor:
        if encoder_out is None:
            raise ContractError("decoder block needs the encoder output")
        h = self.norm_self(x)
        x = x + self.self_attn(h, h, offset, offset)
        x = x + self.cross_attn(self.norm_cross(x), encoder_out, offset, encoder_offset)
        return x + self.ff(self.norm_ff(x))

    def output_projections(self) -> list[Linear]:
        return [self.self_attn.out, self.cross_attn.out, self.ff.project]


def block_forward(x: Tensor, block: EncoderBlock | DecoderBlock, encoder_out: Tensor | None = None) -> Tensor:
    if isinstance(block, DecoderBlock):
        return block(x, encoder_out)
    if encoder_out is not None:
        raise ContractError("encoder blocks take no encoder output")
    return block(x)


class EmbeddingTable(Module):
    def __init__(self, num_ids: int, dim: int, rng: np.random.Generator):
        self.num_ids = num_ids
        self.table = _param(glorot_uniform(rng, num_ids, dim))

    def forward(self, ids) -> Tensor:
        return T.take_rows(self.table, ids)


# ---------------------------------------------------------------------- LSTM


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_sequence(x: Tensor, w_input: Tensor, w_hidden: Tensor, bias: Tensor, h0: Tensor, c0: Tensor) -> Tensor:
    """Run one LSTM layer over ``x`` of shape ``(batch, seq, in)``.

    Gate order along the ``4 * units`` axis is input, forget, cell, output.
    Returns ``(batch, seq, 2, units)`` holding the hidden state (index 0) and
    cell state (index 1) after every step.  The backward pass is hand-written
    back-propagation through time; one tape node covers the whole sequence.
    """
    xd, wx, wh = x.data, w_input.data, w_hidden.data
    batch, steps, _ = xd.shape
    u = wh.shape[0]
    if wx.shape != (xd.shape[-1], 4 * u) or wh.shape != (u, 4 * u) or bias.shape != (4 * u,):
        raise ShapeError(f"LSTM weights {wx.shape}/{wh.shape}/{bias.shape} do not fit input {xd.shape}")
    if h0.shape != (batch, u) or c0.shape != (batch, u):
        raise ContractError(f"LSTM state must be {(batch, u)}, got {h0.shape} and {c0.shape}")

    xw = xd @ wx + bias.data
    hs = np.empty((batch, steps + 1, u))
    cs = np.empty((batch, steps + 1, u))
    hs[:, 0], cs[:, 0] = h0.data, c0.data
    acts = np.empty((batch, steps, 4 * u))
    tcs = np.empty((batch, steps, u))
    for t in range(steps):
        z = xw[:, t] + hs[:, t] @ wh
        a = acts[:, t]
        a[:] = _sig(z)
        a[:, 2 * u : 3 * u] = np.tanh(z[:, 2 * u : 3 * u])
        i, f, g, o = a[:, :u], a[:, u : 2 * u], a[:, 2 * u : 3 * u], a[:, 3 * u :]
        c = f * cs[:, t] + i * g
        tc = np.tanh(c)
        cs[:, t + 1] = c
        tcs[:, t] = tc
        hs[:, t + 1] = o * tc
    out = np.stack([hs[:, 1:], cs[:, 1:]], axis=2)

    def back(gout):
        dh_seq, dc_seq = gout[:, :, 0], gout[:, :, 1]
        dh_next = np.zeros((batch, u))
        dc_next = np.zeros((batch, u))
        dz = np.empty((batch, steps, 4 * u))
        for t in range(steps - 1, -1, -1):
            a = acts[:, t]
            i, f, g, o = a[:, :u], a[:, u : 2 * u], a[:, 2 * u : 3 * u], a[:, 3 * u :]
            tc = tcs[:, t]
            dh = dh_seq[:, t] + dh_next
            dc = dc_seq[:, t] + dc_next + dh * o * (1.0 - tc * tc)
            d = dz[:, t]
            d[:, :u] = dc * g * i * (1.0 - i)
            d[:, u : 2 * u] = dc * cs[:, t] * f * (1.0 - f)
            d[:, 2 * u : 3 * u] = dc * i * (1.0 - g * g)
            d[:, 3 * u :] = dh * tc * o * (1.0 - o)
            dh_next = d @ wh.T
            dc_next = dc * f
        flat = dz.reshape(-1, 4 * u)
        dx = dz @ wx.T
        dwx = xd.reshape(-1, xd.shape[-1]).T @ flat
        dwh = hs[:, :-1].reshape(-1, u).T @ flat
        db = flat.sum(axis=0)
        return dx, dwx, dwh, db, dh_next, dc_next

    return Tensor._make(out, (x, w_input, w_hidden, bias, h0, c0), "lstm_sequence", back)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_input: Tensor, w_hidden: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """Single LSTM step composed from primitive ops (reference for :func:`lstm_sequence`)."""
    z = T.matmul(x, w_input) + T.matmul(h, w_hidden) + bias
    i, f, g, o = T.split(z, 4, axis=-1)
    c_new = T.sigmoid(f) * c + T.sigmoid(i) * T.tanh(g)
    h_new = T.sigmoid(o) * T.tanh(c_new)
    return h_new, c_new


class LstmLayer(Module):
    def __init__(self, in_dim: int, units: int, rng: np.random.Generator):
        self.units = units
        self.w_input = _param(glorot_uniform(rng, in_dim, 4 * units))
        self.w_hidden = _param(glorot_uniform(rng, units, 4 * units))
        b = np.zeros(4 * units)
        b[units : 2 * units] = 1.0  # forget gate
        self.bias = _param(b)

    def forward(self, x: Tensor, h0: Tensor, c0: Tensor) -> Tensor:
        return lstm_sequence(x, self.w_input, self.w_hidden, self.bias, h0, c0)


class LstmStack(Module):
    def __init__(self, input_dim: int, units: int, layers: int, rng: np.random.Generator):
        if units <= 0 or layers <= 0:
            raise ConfigError(f"LSTM needs positive units and layers, got {units} and {layers}")
        self.input_dim, self.units = input_dim, units
        self.layers = [LstmLayer(input_dim if i == 0 else units, units, rng) for i in range(layers)]

    def forward(self, inputs: Tensor, initial_state=None) -> tuple[Tensor, list[tuple[Tensor, Tensor]]]:
        return lstm_forward(inputs, self, initial_state)


def lstm_forward(inputs: Tensor, stack: LstmStack, initial_state=None) -> tuple[Tensor, list[tuple[Tensor, Tensor]]]:
    """Stacked LSTM over ``(batch, seq, in)`` or ``(seq, in)``.

    ``initial_state`` is a per-layer list of ``(h, c)`` pairs or ``None`` entries
    (zeros).  Returns the top-layer outputs and every layer's final ``(h, c)``.
    """
    unbatched = inputs.ndim == 2
    x = inputs.reshape(1, *inputs.shape) if unbatched else inputs
    if x.shape[-1] != stack.input_dim:
        raise ShapeError(f"LSTM expects {stack.input_dim} input features, got {x.shape[-1]}")
    batch, u = x.shape[0], stack.units
    n_layers = len(stack.layers)
    if initial_state is None:
        initial_state = [None] * n_layers
    if len(initial_state) != n_layers:
        raise ContractError(f"initial state lists {len(initial_state)} layers, stack has {n_layers}")
    final = []
    for layer, state in zip(stack.layers, initial_state):
        if state is None:
            h0, c0 = Tensor(np.zeros((batch, u))), Tensor(np.zeros((batch, u)))
        else:
            h0, c0 = state
            if unbatched:
                h0, c0 = h0.reshape(1, u), c0.reshape(1, u)
        seq = layer(x, h0, c0)
        x = seq[:, :, 0, :]
        h_last, c_last = seq[:, -1, 0, :], seq[:, -1, 1, :]
        if unbatched:
            h_last, c_last = h_last.reshape(u), c_last.reshape(u)
        final.append((h_last, c_last))
    outputs = x.reshape(x.shape[1], u) if unbatched else x
    return outputs, final
