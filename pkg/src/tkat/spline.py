"""B-spline bases and the Kolmogorov-Arnold linear layer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Module, glorot_uniform, ones
from .tensor import Tensor, ShapeError, custom_op


@dataclass(frozen=True, eq=False)
class SplineGrid:
    """Uniform knot vector over ``[range_low, range_high]`` extended by ``order`` knots per side."""

    grid_size: int = 5
    order: int = 3
    range_low: float = -1.0
    range_high: float = 1.0
    knots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.range_low >= self.range_high:
            raise ValueError(f"degenerate spline grid [{self.range_low}, {self.range_high}]")
        if self.grid_size < 1 or self.order < 0:
            raise ValueError("grid_size must be >= 1 and order >= 0")
        h = (self.range_high - self.range_low) / self.grid_size
        idx = np.arange(-self.order, self.grid_size + self.order + 1)
        knots = self.range_low + idx * h
        # pin the range ends exactly so clamped inputs sit on a knot
        knots[self.order] = self.range_low
        knots[self.order + self.grid_size] = self.range_high
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def n_basis(self) -> int:
        return self.grid_size + self.order


def cox_de_boor_table(x: np.ndarray, knots: np.ndarray, order: int) -> np.ndarray:
    """Dense Cox-de Boor recursion over every knot interval; shape ``[..., len(knots) - 1 - order]``.

    Reference evaluation; :func:`bspline_basis` uses the equivalent local form.
    """
    x = np.asarray(x, dtype=np.float64)[..., None]
    t = knots
    B = ((x >= t[:-1]) & (x < t[1:])).astype(np.float64)
    for p in range(1, order + 1):
        left = (x - t[: -(p + 1)]) / (t[p:-1] - t[: -(p + 1)]) * B[..., :-1]
        right = (t[p + 1:] - x) / (t[p + 1:] - t[1:-p]) * B[..., 1:]
        B = left + right
    return B


def _local_basis(x: np.ndarray, grid: SplineGrid):
    """Cox-de Boor restricted to the ``k + 1`` functions that are non-zero on each point's span.

    ``x`` is flat and already clamped. Returns the span start index, the
    order-k values ``[M, k+1]`` and the order-(k-1) values ``[M, k]`` needed
    for derivatives.
    """
    k, t = grid.order, grid.knots
    span = np.searchsorted(t, x, side="right") - 1
    span = np.clip(span, k, k + grid.grid_size - 1)
    M = x.shape[0]
    N = np.zeros((M, k + 1))
    N[:, 0] = 1.0
    lower = N[:, :0].copy()
    left = np.zeros((M, k + 1))
    right = np.zeros((M, k + 1))
    for j in range(1, k + 1):
        if j == k:
            lower = N[:, :k].copy()
        left[:, j] = x - t[span + 1 - j]
        right[:, j] = t[span + j] - x
        saved = np.zeros(M)
        for r in range(j):
            temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    return span - k, N, lower


def bspline_basis(x: Tensor, grid: SplineGrid) -> Tensor:
    """Evaluate all ``G + k`` basis functions at every element of ``x``.

    Inputs outside the grid range are clamped to its boundary (zero gradient
    there). Output shape is ``x.shape + (G + k,)``.
    """
    X = x.data
    flat = np.clip(X, grid.range_low, grid.range_high).reshape(-1)
    k, t = grid.order, grid.knots
    first, N, lower = _local_basis(flat, grid)
    M = flat.shape[0]
    rows = np.arange(M)[:, None]
    cols = first[:, None] + np.arange(k + 1)
    dense = np.zeros((M, grid.n_basis))
    dense[rows, cols] = N
    value = dense.reshape(*X.shape, grid.n_basis)

    def rule(g, needs):
        if k == 0:
            return (np.zeros_like(X),)
        # d/dx B_{j,k} = k/(t_{j+k}-t_j) B_{j,k-1} - k/(t_{j+k+1}-t_{j+1}) B_{j+1,k-1}
        padded = np.concatenate([np.zeros((M, 1)), lower, np.zeros((M, 1))], axis=1)
        a = cols
        dN = (k / (t[a + k] - t[a])) * padded[:, :-1] - (k / (t[a + k + 1] - t[a + 1])) * padded[:, 1:]
        g_local = g.reshape(M, grid.n_basis)[rows, cols]
        inside = ((X >= grid.range_low) & (X <= grid.range_high)).reshape(-1)
        return (((g_local * dN).sum(axis=1) * inside).reshape(X.shape),)

    return custom_op(value, (x,), rule, "bspline_basis")


@dataclass
class GridSpec:
    grid_size: int = 5
    order: int = 3
    range_low: float = -1.0
    range_high: float = 1.0

    def build(self) -> SplineGrid:
        return SplineGrid(self.grid_size, self.order, self.range_low, self.range_high)


class KANLinear(Module):
    """One Kolmogorov-Arnold layer: a learnable univariate function on every edge.

    ``out_j = sum_i base_weight[j,i] * silu(x_i)
              + spline_scale[j,i] * sum_b spline_coeffs[j,i,b] * B_b(x_i)``
    """

    def __init__(self, in_dim: int, out_dim: int, grid: SplineGrid | None = None,
                 rng: np.random.Generator | None = None):
        if in_dim <= 0 or out_dim <= 0:
            raise ValueError(f"KANLinear dimensions must be positive, got in={in_dim}, out={out_dim}")
        grid = grid or SplineGrid()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.out_dim = in_dim, out_dim
        self._grid = grid
        nb = grid.n_basis
        self.base_weight = glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim)
        self.spline_coeffs = Tensor(rng.normal(0.0, 0.1 / np.sqrt(nb), size=(out_dim, in_dim, nb)),
                                    requires_grad=True)
        self.spline_scale = ones((out_dim, in_dim))

    @property
    def grid(self) -> SplineGrid:
        return self._grid

    def __call__(self, x: Tensor) -> Tensor:
        return kan_linear_forward(x, self)

    @staticmethod
    def count(in_dim: int, out_dim: int, grid: SplineGrid) -> int:
        return out_dim * in_dim * grid.n_basis + 2 * out_dim * in_dim


def kan_linear_forward(x: Tensor, params: KANLinear) -> Tensor:
    if x.shape[-1] != params.in_dim:
        raise ShapeError(f"KANLinear expects last dim {params.in_dim}, got {x.shape}")
    nb = params.grid.n_basis
    lead = x.shape[:-1]
    base = x.silu() @ params.base_weight.T
    basis = bspline_basis(x, params.grid).reshape(*lead, params.in_dim * nb)
    weights = params.spline_coeffs * params.spline_scale.reshape(params.out_dim, params.in_dim, 1)
    spline = basis @ weights.reshape(params.out_dim, params.in_dim * nb).T
    return base + spline


def init_kan_params(in_dim: int, out_dim: int, grid_spec: GridSpec | SplineGrid | None = None,
                    rng_seed: int = 0) -> KANLinear:
    grid = grid_spec.build() if isinstance(grid_spec, GridSpec) else grid_spec
    return KANLinear(in_dim, out_dim, grid, np.random.default_rng(rng_seed))
