"""TKAN, LSTM and GRU cells plus sequence unrolling.

The TKAN cell keeps LSTM-style forget/input gates and a cell state, but its
output gate is driven by a stack of recurring KAN sub-layers, each carrying
its own memory vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .nn import Module, glorot_uniform, zeros
from .spline import KANLinear, SplineGrid
from .tensor import Tensor, ShapeError, concat, stack

CELL_KINDS = ("TKAN", "LSTM", "GRU")


@dataclass
class CellState:
    """Recurrent state bundle. ``c`` is unused by GRU, ``rkan`` only by TKAN."""

    h: Tensor
    c: Tensor | None = None
    rkan: list[Tensor] = field(default_factory=list)

    def shapes(self) -> tuple:
        return (self.h.shape, None if self.c is None else self.c.shape,
                tuple(m.shape for m in self.rkan))


# TkanCellState is the name used for the TKAN flavour of the bundle
TkanCellState = CellState


def _gate_weights(rng, units: int, input_dim: int):
    W = glorot_uniform(rng, (units, input_dim), input_dim, units)
    U = glorot_uniform(rng, (units, units), units, units)
    return W, U


class RKANSubLayer(Module):
    """KAN sub-layer with memory ``h(t) = W_hh h(t-1) + W_hz x(t)``.

    The edge functions act on the concatenation ``[x(t), h(t)]``.
    """

    def __init__(self, in_dim: int, sub_dim: int, grid: SplineGrid, rng: np.random.Generator):
        self.in_dim, self.sub_dim = in_dim, sub_dim
        self.W_hh = glorot_uniform(rng, (sub_dim, sub_dim), sub_dim, sub_dim)
        self.W_hz = glorot_uniform(rng, (sub_dim, in_dim), in_dim, sub_dim)
        self.kan = KANLinear(in_dim + sub_dim, sub_dim, grid, rng)


def rkan_substep(x: Tensor, memory: Tensor, layer: RKANSubLayer) -> tuple[Tensor, Tensor]:
    if x.shape[-1] != layer.in_dim or memory.shape[-1] != layer.sub_dim:
        raise ShapeError(f"RKAN sub-layer expects ({layer.in_dim}, {layer.sub_dim}), "
                         f"got x {x.shape}, memory {memory.shape}")
    memory = memory @ layer.W_hh.T + x @ layer.W_hz.T
    y = layer.kan(concat([x, memory], axis=-1))
    return y, memory


class TKANCell(Module):
    """Forget/input/candidate gates over ``[x_t, h_{t-1}]``; output gate from the RKAN stack.

    ``candidate_activation`` defaults to sigmoid; ``"tanh"`` gives the
    conventional LSTM candidate.
    """

    kind = "TKAN"

    def __init__(self, input_dim: int, units: int, rng: np.random.Generator,
                 grid: SplineGrid | None = None, n_sublayers: int = 1,
                 sub_dim: int | None = None, candidate_activation: str = "sigmoid",
                 forget_bias: float = 1.0):
        if candidate_activation not in ("sigmoid", "tanh"):
            raise ValueError("candidate_activation must be 'sigmoid' or 'tanh'")
        if n_sublayers < 1:
            raise ValueError("TKAN needs at least one RKAN sub-layer")
        grid = grid or SplineGrid()
        sub_dim = sub_dim or units
        self.input_dim, self.units = input_dim, units
        self._candidate = candidate_activation
        self.W_f, self.U_f = _gate_weights(rng, units, input_dim)
        self.b_f = Tensor(np.full(units, float(forget_bias)), requires_grad=True)
        self.W_i, self.U_i = _gate_weights(rng, units, input_dim)
        self.b_i = zeros((units,))
        self.W_c, self.U_c = _gate_weights(rng, units, input_dim)
        self.b_c = zeros((units,))
        dims = [input_dim] + [sub_dim] * n_sublayers
        self.sublayers = [RKANSubLayer(dims[i], sub_dim, grid, rng) for i in range(n_sublayers)]
        # the last sub-layer must produce one output-gate value per unit
        if sub_dim != units:
            self.sublayers[-1].kan = KANLinear(dims[-2] + sub_dim, units, grid, rng)

    def initial_state(self, batch: int) -> CellState:
        return CellState(h=Tensor(np.zeros((batch, self.units))),
                         c=Tensor(np.zeros((batch, self.units))),
                         rkan=[Tensor(np.zeros((batch, s.sub_dim))) for s in self.sublayers])

    def step(self, x_t: Tensor, state: CellState) -> tuple[Tensor, CellState]:
        return tkan_cell_step(x_t, state, self)


def tkan_cell_step(x_t: Tensor, state: CellState, cell: TKANCell,
                   gate_override: dict[str, Tensor] | None = None) -> tuple[Tensor, CellState]:
    """One TKAN step. ``gate_override`` replaces f/i gates (used to probe the cell-state identity)."""
    if x_t.shape[-1] != cell.input_dim or state.h.shape[-1] != cell.units:
        raise ShapeError(f"TKAN cell expects input {cell.input_dim} / units {cell.units}, "
                         f"got x {x_t.shape}, h {state.h.shape}")
    h = state.h
    f = (x_t @ cell.W_f.T + h @ cell.U_f.T + cell.b_f).sigmoid()
    i = (x_t @ cell.W_i.T + h @ cell.U_i.T + cell.b_i).sigmoid()
    pre_c = x_t @ cell.W_c.T + h @ cell.U_c.T + cell.b_c
    c_tilde = pre_c.sigmoid() if cell._candidate == "sigmoid" else pre_c.tanh()
    if gate_override:
        f = gate_override.get("f", f)
        i = gate_override.get("i", i)
    y = x_t
    memories = []
    for layer, mem in zip(cell.sublayers, state.rkan):
        y, mem = rkan_substep(y, mem, layer)
        memories.append(mem)
    o = y.sigmoid()
    c = f * state.c + i * c_tilde
    h_new = o * c.tanh()
    return h_new, CellState(h=h_new, c=c, rkan=memories)


class LSTMCell(Module):
    kind = "LSTM"

    def __init__(self, input_dim: int, units: int, rng: np.random.Generator, forget_bias: float = 1.0):
        self.input_dim, self.units = input_dim, units
        self.W_f, self.U_f = _gate_weights(rng, units, input_dim)
        self.b_f = Tensor(np.full(units, float(forget_bias)), requires_grad=True)
        self.W_i, self.U_i = _gate_weights(rng, units, input_dim)
        self.b_i = zeros((units,))
        self.W_c, self.U_c = _gate_weights(rng, units, input_dim)
        self.b_c = zeros((units,))
        self.W_o, self.U_o = _gate_weights(rng, units, input_dim)
        self.b_o = zeros((units,))

    def initial_state(self, batch: int) -> CellState:
        return CellState(h=Tensor(np.zeros((batch, self.units))), c=Tensor(np.zeros((batch, self.units))))

    def step(self, x_t: Tensor, state: CellState) -> tuple[Tensor, CellState]:
        return baseline_cell_step("LSTM", x_t, state, self)


class GRUCell(Module):
    """GRU with one bias vector per gate (no separate recurrent bias)."""

    kind = "GRU"

    def __init__(self, input_dim: int, units: int, rng: np.random.Generator):
        self.input_dim, self.units = input_dim, units
        self.W_z, self.U_z = _gate_weights(rng, units, input_dim)
        self.b_z = zeros((units,))
        self.W_r, self.U_r = _gate_weights(rng, units, input_dim)
        self.b_r = zeros((units,))
        self.W_h, self.U_h = _gate_weights(rng, units, input_dim)
        self.b_h = zeros((units,))

    def initial_state(self, batch: int) -> CellState:
        return CellState(h=Tensor(np.zeros((batch, self.units))))

    def step(self, x_t: Tensor, state: CellState) -> tuple[Tensor, CellState]:
        return baseline_cell_step("GRU", x_t, state, self)


def baseline_cell_step(kind: str, x_t: Tensor, state: CellState, cell) -> tuple[Tensor, CellState]:
    if x_t.shape[-1] != cell.input_dim:
        raise ShapeError(f"{kind} cell expects input dim {cell.input_dim}, got {x_t.shape}")
    h = state.h
    if kind == "LSTM":
        f = (x_t @ cell.W_f.T + h @ cell.U_f.T + cell.b_f).sigmoid()
        i = (x_t @ cell.W_i.T + h @ cell.U_i.T + cell.b_i).sigmoid()
        o = (x_t @ cell.W_o.T + h @ cell.U_o.T + cell.b_o).sigmoid()
        g = (x_t @ cell.W_c.T + h @ cell.U_c.T + cell.b_c).tanh()
        c = f * state.c + i * g
        h_new = o * c.tanh()
        return h_new, CellState(h=h_new, c=c)
    if kind == "GRU":
        z = (x_t @ cell.W_z.T + h @ cell.U_z.T + cell.b_z).sigmoid()
        r = (x_t @ cell.W_r.T + h @ cell.U_r.T + cell.b_r).sigmoid()
        cand = (x_t @ cell.W_h.T + (r * h) @ cell.U_h.T + cell.b_h).tanh()
        h_new = z * h + (1.0 - z) * cand
        return h_new, CellState(h=h_new)
    raise ValueError(f"unknown baseline cell kind '{kind}'")


def make_cell(kind: str, input_dim: int, units: int, rng: np.random.Generator, **tkan_options):
    if kind == "TKAN":
        return TKANCell(input_dim, units, rng, **tkan_options)
    if kind == "LSTM":
        return LSTMCell(input_dim, units, rng)
    if kind == "GRU":
        return GRUCell(input_dim, units, rng)
    raise ValueError(f"unknown cell kind '{kind}', expected one of {CELL_KINDS}")


def recurrent_sequence_forward(xs: Tensor, cell, initial_state: CellState | None = None,
                               return_sequences: bool = True,
                               step_hook: Callable[[int, CellState], None] | None = None):
    """Unroll ``cell`` left to right over ``xs`` of shape ``[batch, T, d]``.

    Returns ``(outputs, final_state)`` where outputs is ``[batch, T, units]``
    or ``[batch, units]`` when ``return_sequences`` is false.
    """
    if xs.ndim != 3:
        raise ShapeError(f"expected [batch, T, d] input, got {xs.shape}")
    batch, T, _ = xs.shape
    if T == 0:
        raise ShapeError("sequence length must be at least 1")
    state = initial_state if initial_state is not None else cell.initial_state(batch)
    outputs = []
    for t in range(T):
        h, state = cell.step(xs[:, t, :], state)
        if step_hook is not None:
            step_hook(t, state)
        outputs.append(h)
    if return_sequences:
        return stack(outputs, axis=1), state
    return outputs[-1], state


class RecurrentStack(Module):
    """Several recurrent layers applied in sequence, all returning full sequences."""

    def __init__(self, kind: str, input_dim: int, units: list[int], rng: np.random.Generator,
                 **tkan_options):
        dims = [input_dim] + list(units)
        self.layers = [make_cell(kind, dims[i], dims[i + 1], rng, **tkan_options)
                       for i in range(len(units))]

    def __call__(self, xs: Tensor, initial_states: list[CellState] | None = None,
                 on_init: Callable[[int, CellState], None] | None = None):
        if initial_states is not None and len(initial_states) != len(self.layers):
            raise ShapeError(f"expected {len(self.layers)} initial states, got {len(initial_states)}")
        states = []
        out = xs
        for idx, cell in enumerate(self.layers):
            init = initial_states[idx] if initial_states is not None else cell.initial_state(xs.shape[0])
            if on_init is not None:
                on_init(idx, init)
            out, st = recurrent_sequence_forward(out, cell, init, return_sequences=True)
            states.append(st)
        return out, states


def gru_layer_param_count(input_dim: int, units: int) -> int:
    return 3 * ((input_dim + units) * units + units)


def lstm_layer_param_count(input_dim: int, units: int) -> int:
    return 4 * ((input_dim + units) * units + units)
