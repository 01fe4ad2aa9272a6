"""Parameter containers shared by every layer."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor, ShapeError


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class Module:
    """Base class: trainable tensors and sub-modules are discovered from attributes.

    Attribute order defines the canonical parameter order, so two modules built
    the same way enumerate their parameters identically.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        seen: set[int] = set()
        for name, t in self._walk(prefix):
            if id(t) in seen:
                continue
            seen.add(id(t))
            yield name, t

    def _walk(self, prefix: str):
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            path = f"{prefix}{attr}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield path, value
            elif isinstance(value, Module):
                yield from value._walk(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(f"{path}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, t in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"{name}: expected shape {t.shape}, got {arr.shape}")
            t.data = arr.copy()

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.parameters()))

    def parameter_breakdown(self, depth: int = 1) -> dict[str, int]:
        """Parameter counts grouped by the first ``depth`` path components."""
        out: dict[str, int] = {}
        for name, t in self.named_parameters():
            key = ".".join(name.split(".")[:depth])
            out[key] = out.get(key, 0) + t.size
        return out


class Linear(Module):
    """``y = x W^T + b`` with ``W`` stored as ``[out, in]``."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        if in_dim <= 0 or out_dim <= 0:
            raise ValueError("Linear dimensions must be positive")
        self.in_dim, self.out_dim = in_dim, out_dim
        self.W = glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim)
        self.b = zeros((out_dim,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"Linear expects last dim {self.in_dim}, got {x.shape}")
        y = x @ self.W.T
        return y + self.b if self.b is not None else y
