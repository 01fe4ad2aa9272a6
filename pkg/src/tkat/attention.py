"""Multi-head self-attention, the fully-aware flatten and the linear forecast head."""
from __future__ import annotations

import numpy as np

from .nn import Module, glorot_uniform, zeros
from .tensor import Tensor, ShapeError, softmax


def scaled_dot_attention(Q: Tensor, K: Tensor, V: Tensor) -> tuple[Tensor, Tensor]:
    """``softmax(Q K^T / sqrt(d_attn)) V`` over the last two axes; no mask.

    Returns ``(output, attention_weights)``.
    """
    if Q.shape[-1] != K.shape[-1]:
        raise ShapeError(f"query/key widths differ: {Q.shape} vs {K.shape}")
    if K.shape[-2] != V.shape[-2]:
        raise ShapeError(f"key/value lengths differ: {K.shape} vs {V.shape}")
    d_attn = Q.shape[-1]
    scores = (Q @ K.swapaxes(-1, -2)) * (1.0 / np.sqrt(d_attn))
    weights = softmax(scores, axis=-1)
    return weights @ V, weights


class MultiHeadAttention(Module):
    """Head projections are stored stacked: ``W_Q[h]`` is the ``[d_model, d_attn]`` matrix of head ``h``."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator,
                 d_attn: int | None = None, d_value: int | None = None, combine: bool = True):
        if n_heads < 1:
            raise ValueError("n_heads must be >= 1")
        if d_attn is None:
            if d_model % n_heads:
                raise ValueError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
            d_attn = d_model // n_heads
        d_value = d_value or d_attn
        self.d_model, self.n_heads, self.d_attn, self.d_value = d_model, n_heads, d_attn, d_value
        self.W_Q = glorot_uniform(rng, (n_heads, d_model, d_attn), d_model, d_attn)
        self.W_K = glorot_uniform(rng, (n_heads, d_model, d_attn), d_model, d_attn)
        self.W_V = glorot_uniform(rng, (n_heads, d_model, d_value), d_model, d_value)
        self.W_H = glorot_uniform(rng, (n_heads * d_value, d_model), n_heads * d_value, d_model) if combine else None

    def __call__(self, x: Tensor):
        return multi_head_forward(x, self)


def head_outputs(x: Tensor, params: MultiHeadAttention) -> tuple[Tensor, Tensor]:
    """Per-head attention results ``[..., m_H, T, d_V]`` and weights ``[..., m_H, T, T]``."""
    if x.shape[-1] != params.d_model:
        raise ShapeError(f"attention expects last dim {params.d_model}, got {x.shape}")
    lead, (T, d) = x.shape[:-2], x.shape[-2:]
    xh = x.reshape(*lead, 1, T, d)
    return scaled_dot_attention(xh @ params.W_Q, xh @ params.W_K, xh @ params.W_V)


def multi_head_forward(x: Tensor, params: MultiHeadAttention) -> tuple[Tensor, Tensor]:
    """Self-attention on ``x`` of shape ``[..., T, d_model]``.

    Returns the combined output ``[..., T, d_model]`` and the per-head
    attention matrices ``[..., m_H, T, T]``.
    """
    heads, weights = head_outputs(x, params)
    if params.W_H is None:
        raise ValueError("this attention block was built without the head combiner")
    nd = heads.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    lead, T = x.shape[:-2], x.shape[-2]
    joined = heads.transpose(axes).reshape(*lead, T, params.n_heads * params.d_value)
    return joined @ params.W_H, weights


def flatten_fully_aware(attn_out: Tensor) -> Tensor:
    """Row-major flatten of the whole sequence: ``[..., T, d] -> [..., T*d]``."""
    lead, (T, d) = attn_out.shape[:-2], attn_out.shape[-2:]
    return attn_out.reshape(*lead, T * d)


def flatten_heads(heads: Tensor) -> Tensor:
    """Stack per-head results head by head: ``[..., m_H, T, d_V] -> [..., m_H*T*d_V]``."""
    lead = heads.shape[:-3]
    return heads.reshape(*lead, int(np.prod(heads.shape[-3:])))


class OutputHead(Module):
    """``y = H_flat W + b`` with ``W`` of shape ``[flat_width, horizon]``."""

    def __init__(self, flat_width: int, horizon: int, rng: np.random.Generator):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.flat_width, self.horizon = flat_width, horizon
        self.W = glorot_uniform(rng, (flat_width, horizon), flat_width, horizon)
        self.b = zeros((horizon,))

    def __call__(self, h_flat: Tensor) -> Tensor:
        return output_projection(h_flat, self)


def output_projection(h_flat: Tensor, params: OutputHead) -> Tensor:
    if h_flat.shape[-1] != params.flat_width:
        raise ShapeError(f"output head expects width {params.flat_width}, got {h_flat.shape}")
    if h_flat.ndim == 1:
        return (h_flat.reshape(1, -1) @ params.W + params.b).reshape(params.horizon)
    return h_flat @ params.W + params.b


def sinusoidal_encoding(T: int, d: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
