"""Finite-difference gradient suite over every layer, shared by the CLI and the tests."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .attention import MultiHeadAttention
from .fusion import GLU, GRN, VSN
from .model import TkatConfig, build_tkat
from .recurrent import RKANSubLayer, TKANCell, recurrent_sequence_forward, rkan_substep, tkan_cell_step
from .spline import KANLinear, SplineGrid
from .tensor import Tensor, concat, finite_diff_check

LAYER_TOL = 1e-5
END_TO_END_TOL = 1e-4
SEQUENCE_PARAM_TOL = 1e-4


def _probe(shape, rng) -> np.ndarray:
    # random projection so the scalar loss does not let errors cancel by symmetry
    return rng.normal(size=shape)


def knot_margin(values: np.ndarray, grid: SplineGrid) -> float:
    """Smallest distance from any value to a knot of ``grid``."""
    return float(np.abs(np.asarray(values)[..., None] - grid.knots).min())


def _away_from_knots(grid: SplineGrid, rng, draw, kan_inputs, margin: float = 0.02, tries: int = 200):
    # central differences are only trustworthy away from knots, where tiny
    # basis tails turn rounding noise into large relative errors
    for _ in range(tries):
        arrays = draw(rng)
        if knot_margin(kan_inputs(*arrays), grid) >= margin:
            return arrays
    raise RuntimeError("could not draw a gradient-check point away from the knots")


def _case(build: Callable, x_shape, rng, x_low=-0.9, x_high=0.9):
    x = Tensor(rng.uniform(x_low, x_high, size=x_shape))
    fwd, params = build()
    out_probe = {}

    def loss(z):
        y = fwd(z)
        if "w" not in out_probe:
            out_probe["w"] = _probe(y.shape, np.random.default_rng(99))
        return (y * out_probe["w"]).sum()

    return loss, x, params


def gradient_cases(seed: int = 0) -> dict[str, tuple]:
    """name -> (loss, input tensor, extra tensors, tolerance)."""
    rng = np.random.default_rng(seed)
    grid = SplineGrid(5, 3)
    cases = {}

    kan = KANLinear(3, 2, grid, np.random.default_rng(seed + 1))
    cases["kan_linear"] = (*_case(lambda: (kan, kan.parameters()), (4, 3), rng), LAYER_TOL)

    sub = RKANSubLayer(3, 2, grid, np.random.default_rng(seed + 2))
    x, mem = _away_from_knots(grid, rng, lambda r: (r.uniform(-0.9, 0.9, (4, 3)), r.normal(scale=0.3, size=(4, 2))),
                              lambda x, m: np.concatenate([x, m @ sub.W_hh.data.T + x @ sub.W_hz.data.T], -1))
    mem = Tensor(mem)

    def rkan(z):
        y, m = rkan_substep(z, mem, sub)
        return concat_last(y, m)
    loss, _, _ = _case(lambda: (rkan, None), (4, 3), rng)
    cases["rkan_substep"] = (loss, Tensor(x), [mem, *sub.parameters()], LAYER_TOL)

    cell = TKANCell(3, 2, np.random.default_rng(seed + 3), grid=grid)
    sl = cell.sublayers[0]
    x, h, c, m = _away_from_knots(
        grid, rng,
        lambda r: (r.uniform(-0.9, 0.9, (4, 3)), *(r.normal(scale=0.3, size=(4, 2)) for _ in range(3))),
        lambda x, h, c, m: np.concatenate([x, m @ sl.W_hh.data.T + x @ sl.W_hz.data.T], -1))
    state = cell.initial_state(4)
    state.h, state.c, state.rkan = Tensor(h), Tensor(c), [Tensor(m)]

    def tkan(z):
        h, st = tkan_cell_step(z, state, cell)
        return concat_last(h, st.c, st.rkan[0])
    loss, _, _ = _case(lambda: (tkan, None), (4, 3), rng)
    cases["tkan_cell"] = (loss, Tensor(x), [state.h, state.c, *state.rkan], LAYER_TOL)

    # parameter gradients of h_T after a 3-step unroll; spline-coefficient
    # gradients reach ~1e-6 here, where central differences carry ~1e-10 noise
    xs = Tensor(rng.uniform(-0.9, 0.9, size=(2, 3, 3)))
    w_h = _probe((2, 2), np.random.default_rng(98))

    def unrolled(z):
        _, st = recurrent_sequence_forward(z, cell, return_sequences=False)
        return (st.h * w_h).sum()
    cases["tkan_cell_params"] = (unrolled, xs, cell.parameters(), SEQUENCE_PARAM_TOL)

    glu = GLU(4, np.random.default_rng(seed + 4))
    cases["glu"] = (*_case(lambda: (glu, glu.parameters()), (3, 4), rng, -2, 2), LAYER_TOL)

    grn = GRN(3, 4, np.random.default_rng(seed + 5))
    cases["grn"] = (*_case(lambda: (grn, grn.parameters()), (3, 3), rng, -2, 2), LAYER_TOL)

    vsn = VSN(3, 4, np.random.default_rng(seed + 6))
    cases["vsn"] = (*_case(lambda: (lambda z: vsn(z)[0], vsn.parameters()), (2, 3, 3, 1), rng, -2, 2),
                    LAYER_TOL)

    mha = MultiHeadAttention(4, 2, np.random.default_rng(seed + 7))
    cases["attention"] = (*_case(lambda: (lambda z: mha(z)[0], mha.parameters()), (2, 5, 4), rng, -2, 2),
                          LAYER_TOL)

    for variant in ("BASE", "A", "B"):
        for cell_kind in ("TKAN", "LSTM"):
            cfg = TkatConfig(n_observed=2, n_known=3, past_len=3, horizon=2, d_model=4, n_heads=2,
                             cell_kind=cell_kind, variant=variant, seed=seed)
            model = build_tkat(cfg)
            past = Tensor(rng.uniform(0, 1, size=(2, 3, 5)))
            future = Tensor(rng.uniform(0, 1, size=(2, 2, 3)))
            w = _probe((2, 2), np.random.default_rng(99))

            def e2e(z, model=model, future=future, w=w):
                return (model(z, future) * w).sum()
            name = "tkat" if cell_kind == "TKAN" else "tkatn"
            name = name if variant == "BASE" else f"{name}_{variant.lower()}"
            cases[f"{name}_end_to_end"] = (e2e, past, [future], END_TO_END_TOL)
    return cases


def concat_last(*ts: Tensor) -> Tensor:
    return concat(list(ts), axis=-1)


def run_gradient_suite(eps: float = 1e-6, seed: int = 0) -> list[tuple[str, float, float]]:
    """Returns ``(name, max relative error, tolerance)`` for each case."""
    rows = []
    for name, (loss, x, extra, tol) in gradient_cases(seed).items():
        rows.append((name, finite_diff_check(loss, x, eps=eps, wrt=extra or ()), tol))
    return rows
