"""Simple comparison models: stacked recurrent layers + dense head, and an MLP."""
from __future__ import annotations

import numpy as np

from .nn import Linear, Module
from .recurrent import RecurrentStack
from .spline import SplineGrid
from .tensor import Tensor, ShapeError

SIMPLE_KINDS = ("TKAN", "GRU", "LSTM", "MLP")


def _as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class SimpleRecurrent(Module):
    """Recurrent layers over the past window; the last hidden state feeds a linear layer of width ``horizon``."""

    def __init__(self, kind: str, n_features: int, horizon: int, units=(100, 100), seed: int = 0,
                 grid: SplineGrid | None = None):
        rng = np.random.default_rng(seed)
        self.kind, self.n_features, self.horizon = kind, n_features, horizon
        opts = {"grid": grid} if (kind == "TKAN" and grid is not None) else {}
        self.recurrent = RecurrentStack(kind, n_features, list(units), rng, **opts)
        self.dense = Linear(units[-1], horizon, rng)

    def __call__(self, past, future=None) -> Tensor:
        past = _as_input(past)
        if past.ndim != 3 or past.shape[-1] != self.n_features:
            raise ShapeError(f"expected [batch, P, {self.n_features}] input, got {past.shape}")
        seq, _ = self.recurrent(past)
        return self.dense(seq[:, -1, :])


class MLPBaseline(Module):
    """Flattened past window -> dense(relu) -> dense(relu) -> dense(horizon)."""

    def __init__(self, n_features: int, past_len: int, horizon: int, hidden=(100, 100), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.kind = "MLP"
        self.n_features, self.past_len, self.horizon = n_features, past_len, horizon
        dims = [n_features * past_len, *hidden]
        self.hidden = [Linear(dims[i], dims[i + 1], rng) for i in range(len(hidden))]
        self.dense = Linear(dims[-1], horizon, rng)

    def __call__(self, past, future=None) -> Tensor:
        past = _as_input(past)
        if past.ndim != 3 or past.shape[1:] != (self.past_len, self.n_features):
            raise ShapeError(f"expected [batch, {self.past_len}, {self.n_features}] input, got {past.shape}")
        z = past.reshape(past.shape[0], self.past_len * self.n_features)
        for layer in self.hidden:
            z = layer(z).relu()
        return self.dense(z)


def build_simple_baseline(kind: str, n_features: int, past_len: int, horizon: int, seed: int = 0,
                          units=(100, 100), grid: SplineGrid | None = None) -> Module:
    if kind == "MLP":
        return MLPBaseline(n_features, past_len, horizon, hidden=units, seed=seed)
    if kind in ("TKAN", "GRU", "LSTM"):
        return SimpleRecurrent(kind, n_features, horizon, units=units, seed=seed, grid=grid)
    raise ValueError(f"unknown baseline kind {kind!r}, expected one of {SIMPLE_KINDS}")
