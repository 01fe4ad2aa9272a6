"""Dense float64 tensors with a reverse-mode differentiation tape.

Every op returns a new :class:`Tensor`; when any input requires a gradient the
output remembers its parents and a backward rule. :func:`backward` walks the
recorded graph once in reverse topological order and sums gradients over
fan-out.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "tensor",
    "backward",
    "no_grad",
    "matmul",
    "elementwise",
    "softmax",
    "layer_norm",
    "concat",
    "stack",
    "finite_diff_check",
    "LAYER_NORM_EPS",
]

LAYER_NORM_EPS = 1e-6


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf value appears in a tensor."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording them on the tape."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by '{op}'")


class Tensor:
    """An n-dimensional float64 array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if any(s <= 0 for s in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        _check_finite(arr, "construct")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @classmethod
    def _result(cls, arr: np.ndarray, parents: Sequence["Tensor"], rule: Callable, op: str) -> "Tensor":
        _check_finite(arr, op)
        out = cls.__new__(cls)
        out.data = arr
        out.grad = None
        out.op = op
        if _grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = rule
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", _as_tensor(other), self)

    def __sub__(self, other):
        return elementwise("subtract", self, other)

    def __rsub__(self, other):
        return elementwise("subtract", _as_tensor(other), self)

    def __mul__(self, other):
        return elementwise("multiply", self, other)

    def __rmul__(self, other):
        return elementwise("multiply", _as_tensor(other), self)

    def __truediv__(self, other):
        return elementwise("divide", self, other)

    def __neg__(self):
        return elementwise("negate", self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    # -- method forms -------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return _sum(self, axis, keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _transpose(self, axes)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return _transpose(self, tuple(axes))

    def sigmoid(self) -> "Tensor":
        return elementwise("sigmoid", self)

    def tanh(self) -> "Tensor":
        return elementwise("tanh", self)

    def relu(self) -> "Tensor":
        return elementwise("relu", self)

    def elu(self) -> "Tensor":
        return elementwise("elu", self)

    def silu(self) -> "Tensor":
        return elementwise("silu", self)

    def exp(self) -> "Tensor":
        return elementwise("exp", self)

    def square(self) -> "Tensor":
        return elementwise("square", self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------
def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form cannot overflow and avoids sign-split masking
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _unary(kind: str, x: np.ndarray) -> tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]:
    """Return forward value and a function mapping upstream grad to input grad."""
    if kind == "sigmoid":
        y = _sigmoid(x)
        return y, lambda g: g * y * (1.0 - y)
    if kind == "tanh":
        y = np.tanh(x)
        return y, lambda g: g * (1.0 - y * y)
    if kind == "relu":
        mask = x > 0
        return np.where(mask, x, 0.0), lambda g: g * mask
    if kind == "elu":
        neg = x < 0
        em1 = np.expm1(np.minimum(x, 0.0))
        return np.where(neg, em1, x), lambda g: g * np.where(neg, em1 + 1.0, 1.0)
    if kind == "silu":
        s = _sigmoid(x)
        return x * s, lambda g: g * (s * (1.0 + x * (1.0 - s)))
    if kind == "exp":
        y = np.exp(x)
        return y, lambda g: g * y
    if kind == "square":
        return x * x, lambda g: g * 2.0 * x
    if kind == "negate":
        return -x, lambda g: -g
    raise ValueError(f"unknown elementwise op '{kind}'")


_BINARY = ("add", "subtract", "multiply", "divide")
UNARY_KINDS = ("sigmoid", "tanh", "relu", "elu", "silu", "exp", "square", "negate")


def elementwise(kind: str, x, y=None) -> Tensor:
    """Apply a named elementwise op. Binary kinds broadcast numpy-style."""
    x = _as_tensor(x)
    if kind in _BINARY:
        if y is None:
            raise ValueError(f"'{kind}' needs two operands")
        y = _as_tensor(y)
        a, b = x.data, y.data
        try:
            out_shape = np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape} for '{kind}'") from None
        if kind == "add":
            val = a + b

            def rule(g, needs):
                return (_unbroadcast(g, a.shape) if needs[0] else None,
                        _unbroadcast(g, b.shape) if needs[1] else None)
        elif kind == "subtract":
            val = a - b

            def rule(g, needs):
                return (_unbroadcast(g, a.shape) if needs[0] else None,
                        _unbroadcast(-g, b.shape) if needs[1] else None)
        elif kind == "multiply":
            val = a * b

            def rule(g, needs):
                return (_unbroadcast(g * b, a.shape) if needs[0] else None,
                        _unbroadcast(g * a, b.shape) if needs[1] else None)
        else:
            val = a / b

            def rule(g, needs):
                return (_unbroadcast(g / b, a.shape) if needs[0] else None,
                        _unbroadcast(-g * a / (b * b), b.shape) if needs[1] else None)
        assert val.shape == out_shape
        return Tensor._result(val, (x, y), rule, kind)
    if y is not None:
        raise ValueError(f"'{kind}' takes a single operand")
    val, dfn = _unary(kind, x.data)
    return Tensor._result(val, (x,), lambda g, needs: (dfn(g),), kind)


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading (batch) axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands with ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    A, B = a.data, b.data
    try:
        val = np.matmul(A, B)
    except ValueError:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} x {b.shape}") from None

    def rule(g, needs):
        ga = gb = None
        if needs[0]:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(B, -1, -2)), A.shape)
        if needs[1]:
            if A.ndim > 2 and B.ndim == 2:
                # fold batch axes into rows: one GEMM instead of a batched one
                ga2 = A.reshape(-1, A.shape[-1])
                gb = ga2.T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(A, -1, -2), g), B.shape)
        return ga, gb

    return Tensor._result(val, (a, b), rule, "matmul")


def _sum(x: Tensor, axis, keepdims: bool) -> Tensor:
    shape = x.shape
    val = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def rule(g, needs):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._result(val, (x,), rule, "sum")


def _reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        val = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {tuple(shape)}") from None
    return Tensor._result(val, (x,), lambda g, needs: (g.reshape(old),), "reshape")


def _transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return Tensor._result(x.data.transpose(axes), (x,),
                          lambda g, needs: (g.transpose(inv),), "transpose")


def _getitem(x: Tensor, index) -> Tensor:
    shape = x.shape
    val = np.array(x.data[index], dtype=np.float64)

    def rule(g, needs):
        out = np.zeros(shape)
        if _is_fancy(index):
            np.add.at(out, index, g)
        else:
            out[index] = g
        return (out,)

    return Tensor._result(val, (x,), rule, "getitem")


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        val = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as err:
        raise ShapeError(f"concat failed: {err}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g, needs):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(val, tensors, rule, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        val = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as err:
        raise ShapeError(f"stack failed: {err}") from None
    n = len(tensors)

    def rule(g, needs):
        parts = np.split(g, n, axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in parts)

    return Tensor._result(val, tensors, rule, "stack")


# ---------------------------------------------------------------------------
# fused ops
# ---------------------------------------------------------------------------
def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted) along ``axis``."""
    x = _as_tensor(x)
    if x.shape[axis] < 1:
        raise ShapeError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def rule(g, needs):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._result(y, (x,), rule, "softmax")


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if d < 2:
        raise ShapeError("layer_norm needs a last dimension of at least 2")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({d},), got {gain.shape}, {bias.shape}")
    X = x.data
    mu = X.mean(axis=-1, keepdims=True)
    xc = X - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    G = gain.data
    val = xhat * G + bias.data

    def rule(g, needs):
        gx = ggain = gbias = None
        if needs[0]:
            dxh = g * G
            gx = inv * (dxh - dxh.mean(axis=-1, keepdims=True)
                        - xhat * (dxh * xhat).mean(axis=-1, keepdims=True))
        if needs[1]:
            ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        if needs[2]:
            gbias = g.reshape(-1, d).sum(axis=0)
        return gx, ggain, gbias

    return Tensor._result(val, (x, gain, bias), rule, "layer_norm")


def custom_op(value: np.ndarray, parents: Sequence[Tensor], rule: Callable, op: str) -> Tensor:
    """Record an op defined outside this module (e.g. spline bases)."""
    return Tensor._result(value, parents, rule, op)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------
def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, int]] = [(root, 0)]
    while stack_:
        node, i = stack_.pop()
        if i == 0:
            if id(node) in seen:
                continue
            seen.add(id(node))
        if i < len(node._parents):
            stack_.append((node, i + 1))
            parent = node._parents[i]
            if parent.requires_grad and id(parent) not in seen:
                stack_.append((parent, 0))
        else:
            order.append(node)
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Backpropagate from a scalar ``loss``.

    Sets ``.grad`` on every grad-enabled leaf reachable from ``loss`` and
    returns a map from those leaves to their gradients.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    leaves: dict[Tensor, np.ndarray] = {}
    if not loss.requires_grad:
        return leaves
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g
            leaves[node] = g
            continue
        needs = tuple(p.requires_grad for p in node._parents)
        for parent, pg, need in zip(node._parents, node._backward(g, needs), needs):
            if not need or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------
def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-6,
    wrt: Iterable[Tensor] = (),
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Compare tape gradients of scalar ``f(x)`` with central differences.

    Gradients are checked for ``x`` and every tensor in ``wrt`` (tensors that
    ``f`` closes over). ``max_coords`` samples that many coordinates per tensor
    instead of all of them. Returns the maximum of
    ``|analytic - numeric| / (|analytic| + |numeric| + 1e-12)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    targets = [x, *wrt]
    saved_flags = [t.requires_grad for t in targets]
    for t in targets:
        t.requires_grad = True
        t.grad = None
    try:
        loss = f(x)
        if loss.size != 1:
            raise ShapeError("finite_diff_check needs a scalar-valued function")
        grads = backward(loss)
        rng = np.random.default_rng(seed)
        worst = 0.0
        with no_grad():
            for t in targets:
                analytic = grads.get(t, np.zeros(t.shape)).reshape(-1)
                coords = np.arange(t.size)
                if max_coords is not None and t.size > max_coords:
                    coords = np.sort(rng.choice(t.size, size=max_coords, replace=False))
                base = t.data
                for c in coords:
                    plus = base.copy().reshape(-1)
                    plus[c] += eps
                    t.data = plus.reshape(base.shape)
                    fp = f(x).item()
                    minus = base.copy().reshape(-1)
                    minus[c] -= eps
                    t.data = minus.reshape(base.shape)
                    fm = f(x).item()
                    t.data = base
                    numeric = (fp - fm) / (2.0 * eps)
                    a = analytic[c]
                    err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
                    worst = max(worst, err)
        return worst
    finally:
        for t, flag in zip(targets, saved_flags):
            t.requires_grad = flag
