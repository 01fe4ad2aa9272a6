"""Gating blocks: GLU, context-free GRN, per-feature embeddings and variable selection."""
from __future__ import annotations

import numpy as np

from .nn import Module, Linear, ones, zeros
from .tensor import Tensor, ShapeError, layer_norm, softmax, stack


class GLU(Module):
    """``sigmoid(W4 g + b4) * (W5 g + b5)``."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.d_model = d_model
        self.gate = Linear(d_model, d_model, rng)
        self.value = Linear(d_model, d_model, rng)

    def __call__(self, gamma: Tensor) -> Tensor:
        return glu_forward(gamma, self)


def glu_forward(gamma: Tensor, params: GLU) -> Tensor:
    if gamma.shape[-1] != params.d_model:
        raise ShapeError(f"GLU expects last dim {params.d_model}, got {gamma.shape}")
    return params.gate(gamma).sigmoid() * params.value(gamma)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = ones((d,))
        self.bias = zeros((d,))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class GRN(Module):
    """Gated residual network without an external context input.

    ``LayerNorm(skip(x) + GLU(W1 ELU(W2 x + b2) + b1))`` where ``skip`` is the
    identity when ``d_in == d_out`` and a linear projection otherwise.
    """

    def __init__(self, d_in: int, d_model: int, rng: np.random.Generator, d_out: int | None = None):
        d_out = d_out or d_model
        self.d_in, self.d_model, self.d_out = d_in, d_model, d_out
        self.dense2 = Linear(d_in, d_model, rng)      # W2, b2
        self.dense1 = Linear(d_model, d_out, rng)     # W1, b1
        self.glu = GLU(d_out, rng)
        self.norm = LayerNorm(d_out)
        self.skip = Linear(d_in, d_out, rng) if d_in != d_out else None

    def __call__(self, x: Tensor) -> Tensor:
        return grn_forward(x, self)


def grn_forward(x: Tensor, params: GRN) -> Tensor:
    if x.shape[-1] != params.d_in:
        raise ShapeError(f"GRN expects last dim {params.d_in}, got {x.shape}")
    eta2 = params.dense2(x).elu()
    eta1 = params.dense1(eta2)
    residual = params.skip(x) if params.skip is not None else x
    return params.norm(residual + params.glu(eta1))


class FeatureEmbedding(Module):
    """Independent affine map ``a_j * x_j + b_j`` (width ``embed_dim``) for every scalar feature."""

    def __init__(self, n_features: int, rng: np.random.Generator, embed_dim: int = 1):
        self.n_features, self.embed_dim = n_features, embed_dim
        limit = np.sqrt(6.0 / (1 + embed_dim))
        self.scale = Tensor(rng.uniform(-limit, limit, size=(n_features, embed_dim)), requires_grad=True)
        self.shift = zeros((n_features, embed_dim))

    def __call__(self, raw: Tensor) -> Tensor:
        """``[..., m]`` -> ``[..., m, embed_dim]``."""
        return feature_embed(raw, self)


def feature_embed(raw: Tensor, params: FeatureEmbedding) -> Tensor:
    if raw.shape[-1] != params.n_features:
        raise ShapeError(f"embedding expects {params.n_features} features, got {raw.shape}")
    return raw.reshape(*raw.shape, 1) * params.scale + params.shift


class VSN(Module):
    """Variable selection: softmax weights from a GRN over all embedded inputs,
    applied to per-variable GRN outputs (each GRN shared across time)."""

    def __init__(self, n_vars: int, d_model: int, rng: np.random.Generator, embed_dim: int = 1):
        if n_vars < 1:
            raise ValueError("VSN needs at least one variable")
        self.n_vars, self.d_model, self.embed_dim = n_vars, d_model, embed_dim
        # a single variable always gets weight 1; LayerNorm over one logit is undefined
        self.selection = GRN(n_vars * embed_dim, d_model, rng, d_out=n_vars) if n_vars > 1 else None
        self.var_grns = [GRN(embed_dim, d_model, rng) for _ in range(n_vars)]

    def __call__(self, xi: Tensor) -> tuple[Tensor, Tensor]:
        return vsn_forward(xi, self)


def vsn_forward(xi: Tensor, params: VSN) -> tuple[Tensor, Tensor]:
    """``xi``: ``[..., m, e]`` embedded streams. Returns ``(combined [..., d_model], weights [..., m])``."""
    m, e = params.n_vars, params.embed_dim
    if xi.shape[-2:] != (m, e):
        raise ShapeError(f"VSN expects [..., {m}, {e}] input, got {xi.shape}")
    lead = xi.shape[:-2]
    flat = xi.reshape(*lead, m * e)
    if params.selection is None:
        weights = Tensor(np.ones(lead + (1,)))
    else:
        weights = softmax(params.selection(flat), axis=-1)
    processed = stack([grn(xi[..., j, :]) for j, grn in enumerate(params.var_grns)], axis=-2)
    combined = (processed * weights.reshape(*lead, m, 1)).sum(axis=-2)
    return combined, weights

