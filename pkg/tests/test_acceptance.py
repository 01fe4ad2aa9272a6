"""End-to-end acceptance checks. Each test prints one PASS/FAIL line and the
full list is repeated in the terminal summary."""
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import record_criterion
from tkat.baselines import build_simple_baseline
from tkat.bench import load_config, parse_config, run_benchmark, write_report
from tkat.data import audit_sample, generate_synthetic, moving_median_scale, prepare_dataset
from tkat.fusion import GLU, GRN, VSN
from tkat.gradcheck import END_TO_END_TOL, LAYER_TOL, run_gradient_suite
from tkat.model import TkatConfig, build_tkat
from tkat.recurrent import TKANCell, tkan_cell_step
from tkat.spline import SplineGrid, bspline_basis
from tkat.tensor import Tensor, layer_norm, softmax
from tkat.training import (Action, CallbackState, TrainConfig, callback_update, evaluate_loss,
                           train_loop)

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk.ini"
DESK_OUT = ROOT / "results" / "desk"


# ---------------------------------------------------------------------------
# 1. gradient suite
# ---------------------------------------------------------------------------
def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    rows = run_gradient_suite(eps=1e-6)
    elapsed = time.perf_counter() - start
    failures = [(n, e, t) for n, e, t in rows if not e < t]
    layer_rows = [r for r in rows if not r[0].endswith("end_to_end")]
    e2e_rows = [r for r in rows if r[0].endswith("end_to_end")]
    worst_layer = max(e for n, e, _ in layer_rows if n != "tkan_cell_params")
    worst_e2e = max(e for _, e, _ in e2e_rows)
    ok = (not failures and elapsed < 300 and worst_layer < LAYER_TOL and worst_e2e < END_TO_END_TOL
          and len(e2e_rows) == 6)
    record_criterion(1, "gradient suite", ok,
                     f"{len(rows)} cases, worst layer {worst_layer:.2e}, worst end-to-end {worst_e2e:.2e}, "
                     f"{elapsed:.1f}s" + (f", failing {failures}" if failures else ""))
    assert ok


# ---------------------------------------------------------------------------
# 2. algebraic invariants, each over at least 100 generated instances
# ---------------------------------------------------------------------------
def _count_examples(prop) -> int:
    calls = []
    prop(calls)
    return len(calls)


def _partition_of_unity(calls):
    @settings(max_examples=120, deadline=None, database=None)
    @given(arrays(np.float64, 40, elements=st.floats(-0.999999, 0.999999)), st.integers(1, 9), st.integers(0, 5))
    def prop(x, G, k):
        calls.append(1)
        B = bspline_basis(Tensor(x), SplineGrid(G, k)).data
        assert (B >= 0).all() and np.abs(B.sum(-1) - 1).max() < 1e-10
    prop()


def _softmax_simplex(calls):
    @settings(max_examples=120, deadline=None, database=None)
    @given(arrays(np.float64, (4, 7), elements=st.floats(-50, 50)))
    def prop(x):
        calls.append(1)
        y = softmax(Tensor(x)).data
        assert (y >= 0).all() and np.abs(y.sum(-1) - 1).max() < 1e-12
    prop()


def _vsn_simplex(calls):
    @settings(max_examples=120, deadline=None, database=None)
    @given(arrays(np.float64, (2, 3, 5, 1), elements=st.floats(-10, 10)), st.integers(0, 10_000))
    def prop(x, seed):
        calls.append(1)
        _, w = VSN(5, 4, np.random.default_rng(seed))(Tensor(x))
        assert (w.data >= 0).all() and np.abs(w.data.sum(-1) - 1).max() < 1e-12
    prop()


def _glu_grn_suppression(calls):
    @settings(max_examples=120, deadline=None, database=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)), st.integers(0, 10_000), st.sampled_from([4, 6]))
    def prop(x, seed, d_model):
        calls.append(1)
        rng = np.random.default_rng(seed)
        glu = GLU(4, rng)
        glu.gate.W.data[:] = 0
        glu.gate.b.data[:] = -40
        assert np.abs(glu(Tensor(x)).data).max() <= 5e-18 * (1 + np.abs(glu.value(Tensor(x)).data).max())
        grn = GRN(4, d_model, rng)
        grn.glu.gate.W.data[:] = 0
        grn.glu.gate.b.data[:] = -40
        skip = x if grn.skip is None else grn.skip(Tensor(x)).data
        d = skip.shape[-1]
        expect = layer_norm(Tensor(skip), Tensor(np.ones(d)), Tensor(np.zeros(d))).data
        np.testing.assert_allclose(grn(Tensor(x)).data, expect, atol=1e-9)
    prop()


def _forget_product(calls):
    @settings(max_examples=120, deadline=None, database=None)
    @given(st.integers(1, 6), st.integers(0, 2 ** 31 - 1))
    def prop(T, seed):
        calls.append(1)
        rng = np.random.default_rng(seed)
        cell = TKANCell(2, 3, rng)
        state = cell.initial_state(2)
        c0 = rng.normal(size=(2, 3))
        state.c = Tensor(c0)
        fs = rng.uniform(0, 1, (T, 2, 3))
        for t in range(T):
            _, state = tkan_cell_step(Tensor(rng.normal(size=(2, 2))), state, cell,
                                      gate_override={"f": Tensor(fs[t]), "i": Tensor(np.zeros((2, 3)))})
        np.testing.assert_allclose(state.c.data, fs.prod(axis=0) * c0, rtol=1e-12, atol=1e-15)
    prop()


def _median_equivariance(calls):
    @settings(max_examples=120, deadline=None, database=None)
    @given(arrays(np.float64, 80, elements=st.floats(0.01, 1e4)), st.floats(1e-3, 1e3),
           st.integers(1, 12), st.integers(1, 6))
    def prop(x, c, window, tau):
        calls.append(1)
        np.testing.assert_allclose(moving_median_scale(c * x, window, tau), moving_median_scale(x, window, tau),
                                   rtol=1e-12, equal_nan=True)
    prop()


INVARIANTS = {
    "partition of unity": _partition_of_unity,
    "softmax simplex": _softmax_simplex,
    "VSN simplex": _vsn_simplex,
    "GLU/GRN suppression": _glu_grn_suppression,
    "forget-product identity": _forget_product,
    "moving-median scale equivariance": _median_equivariance,
}


def test_criterion_2_invariants():
    counts, errors = {}, {}
    for name, prop in INVARIANTS.items():
        try:
            counts[name] = _count_examples(prop)
        except Exception as err:  # report every invariant before failing
            errors[name] = f"{type(err).__name__}"
    ok = not errors and all(n >= 100 for n in counts.values())
    detail = ", ".join(f"{k}={v}" for k, v in counts.items())
    record_criterion(2, "algebraic invariants", ok, detail + (f"; failed {errors}" if errors else ""))
    assert ok


# ---------------------------------------------------------------------------
# 3. parameter-count oracle
# ---------------------------------------------------------------------------
def test_criterion_3_gru_counts():
    got = {h: build_simple_baseline("GRU", 21, 30, h).num_parameters() for h in (1, 3, 30)}
    ok = got == {1: 97_001, 3: 97_203, 30: 99_930}
    record_criterion(3, "GRU parameter counts", ok, ", ".join(f"tau={h}: {n:,}" for h, n in got.items()))
    assert ok


# ---------------------------------------------------------------------------
# 4. overfit probe
# ---------------------------------------------------------------------------
PROBE = dict(n_samples=200, learning_rate=3e-3, batch_size=50, grid_range=(-3.0, 3.0))


def _probe_model(seed=0):
    data = prepare_dataset(generate_synthetic(4000, 5, seed=0), past_len=12, horizon=3)
    subset = data.train.subset(slice(0, PROBE["n_samples"]))
    lo, hi = PROBE["grid_range"]
    model = build_tkat(TkatConfig(n_observed=5, n_known=2, past_len=12, horizon=3, d_model=16, n_heads=2,
                                  grid_range=(lo, hi), seed=seed))
    return model, subset


def _probe_config(epochs, seed=0):
    # the probe measures capacity, so neither callback may cut it short
    return TrainConfig(learning_rate=PROBE["learning_rate"], batch_size=PROBE["batch_size"], max_epochs=epochs,
                       early_stop_patience=10 ** 6, plateau_patience=10 ** 6, seed=seed)


def test_criterion_4_overfit_probe():
    model, subset = _probe_model()
    start = time.perf_counter()
    result = train_loop(model, subset, None, _probe_config(500))
    reached = next((h.epoch for h in result.history if h.val_loss < 1e-3), None)
    final = evaluate_loss(model, subset)

    a, s = _probe_model()
    b, _ = _probe_model()
    ha = train_loop(a, s, None, _probe_config(5)).history
    hb = train_loop(b, s, None, _probe_config(5)).history
    deterministic = ha == hb and all(x.tobytes() == y.tobytes() for x, y in
                                     zip(a.state_dict().values(), b.state_dict().values()))
    ok = reached is not None and final < 1e-3 and deterministic
    record_criterion(4, "overfit probe", ok,
                     f"best training MSE {result.best_val_loss:.2e}, first below 1e-3 at epoch "
                     f"{reached if reached is None else reached + 1}, deterministic={deterministic}, "
                     f"{time.perf_counter() - start:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 5. desk-scale benchmark
# ---------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_5_desk_benchmark():
    cfg = load_config(DESK_CONFIG)
    start = time.perf_counter()
    report = run_benchmark(cfg)
    elapsed = time.perf_counter() - start
    write_report(report, DESK_OUT)

    h1 = {m: report.aggregate(m, 1)[0] for m in cfg.models}
    positive = all(np.isfinite(v) and v > 0 for v in h1.values())

    def per_seed(model, h):
        return {c.seed: c.r2 for c in report.ok_cells(model, h)}
    ordering = {}
    for h in (3, 6):
        tk, simple = per_seed("TKAT", h), per_seed("TKAN-simple", h)
        wins = sum(tk.get(s, -np.inf) >= simple.get(s, np.inf) for s in cfg.seeds)
        ordering[h] = (wins, report.aggregate("TKAT", h)[0], report.aggregate("TKAN-simple", h)[0])
    ordered = all(w >= 2 for w, _, _ in ordering.values())
    fast = elapsed < 3600
    ok = positive and ordered and fast
    detail = (f"(a) min R2 at h=1 {min(h1.values()):.3f} ({min(h1, key=h1.get)}); "
              + "; ".join(f"(b) h={h}: TKAT {t:.3f} vs TKAN-simple {s:.3f}, seed wins {w}/3"
                          for h, (w, t, s) in ordering.items())
              + f"; (c) {elapsed / 60:.1f} min")
    record_criterion(5, "desk-scale benchmark", ok, detail)
    assert positive, f"some model has R2 <= 0 at horizon 1: {h1}"
    assert fast, f"benchmark took {elapsed:.0f}s"
    assert ordered, f"TKAT does not match TKAN-simple on 2 of 3 seeds: {ordering}"


# ---------------------------------------------------------------------------
# 6. training-protocol conformance
# ---------------------------------------------------------------------------
def _walk(losses):
    state, trace = CallbackState(), []
    snaps = iter(range(100))
    for v in losses:
        action = callback_update(v, state, lambda: {"epoch": next(snaps)})
        trace.append((action, state.since_best, state.since_reduce))
        if action is Action.STOP_RESTORE_BEST:
            break
    return trace, state


def test_criterion_6_callbacks():
    C, R, S = Action.CONTINUE, Action.REDUCE_LR, Action.STOP_RESTORE_BEST
    checks = {}
    trace, _ = _walk([1.0, 0.9, 0.8])
    checks["monotone"] = trace == [(C, 0, 0)] * 3
    trace, _ = _walk([1.0, 1.1, 1.1, 1.1])
    checks["reduce after 3"] = trace == [(C, 0, 0), (C, 1, 1), (C, 2, 2), (R, 3, 0)]
    trace, st_ = _walk([1.0, 1.0, 1.3, 1.0, 1.2, 1.0, 1.1])
    checks["stop after 6"] = (trace == [(C, 0, 0), (C, 1, 1), (C, 2, 2), (R, 3, 0), (C, 4, 1), (C, 5, 2),
                                        (S, 6, 3)]
                              and st_.best_weights == {"epoch": 0} and st_.best_epoch == 0)
    trace, st_ = _walk([1.0, 1.2, 1.2, 1.2, 0.7, 0.8, 0.8, 0.8, 0.8, 0.8, 0.8])
    checks["reset on improvement"] = ([a for a, _, _ in trace] == [C, C, C, R, C, C, C, R, C, C, S]
                                      and st_.best_epoch == 4 and st_.best_weights == {"epoch": 1})

    from tkat.nn import Linear, Module
    from tkat.data import WindowSet

    class Probe(Module):
        def __init__(self):
            self.lin = Linear(1, 1, np.random.default_rng(0))

        def __call__(self, past, future):
            return self.lin(Tensor(past)[:, -1, :])

    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, (60, 1, 1))
    y = 2 * x[:, 0] + rng.normal(scale=0.5, size=(60, 1))
    train = WindowSet(x[:40], np.zeros((40, 1, 1)), y[:40], np.arange(40))
    val = WindowSet(x[40:], np.zeros((20, 1, 1)), y[40:], np.arange(40, 60))
    model = Probe()
    res = train_loop(model, train, val, TrainConfig(learning_rate=0.5, batch_size=4, max_epochs=80, seed=0))
    reductions, lr_ok = 0, True
    for h in res.history:
        lr_ok &= h.lr == 0.5 * 0.5 ** reductions
        reductions += h.action == R.value
    checks["loop restores best"] = evaluate_loss(model, val) == res.best_val_loss
    checks["lr halves exactly"] = lr_ok and reductions >= 1
    checks["loop stops"] = res.history[-1].action == S.value
    ok = all(checks.values())
    record_criterion(6, "callback protocol", ok, ", ".join(f"{k}={v}" for k, v in checks.items()))
    assert ok


# ---------------------------------------------------------------------------
# 7. pipeline conformance
# ---------------------------------------------------------------------------
def test_criterion_7_pipeline():
    past_len, horizon, window = 30, 1, 336
    # rows lost to the median warm-up and the first past window, plus the final target row
    n_rows = 26_000 + (window + horizon - 1) + (past_len - 1) + horizon
    table = generate_synthetic(n_rows, 19, seed=11)
    data = prepare_dataset(table, past_len, horizon, window)
    n = len(data.train) + len(data.val) + len(data.test)
    pool = len(data.train) + len(data.val)
    sizes_ok = (n == 26_000 and abs(pool - 21_000) / 21_000 < 0.02 and abs(len(data.test) - 5_000) / 5_000 < 0.05
                and data.train.past.shape[-1] == 21)
    chrono = data.train.anchors[-1] < data.val.anchors[0] and data.val.anchors[-1] < data.test.anchors[0]

    rng = np.random.default_rng(0)
    picks = rng.choice(n, 1000, replace=False)
    splits = [data.train, data.val, data.test]
    offsets = np.cumsum([0] + [len(s) for s in splits])
    leaks = 0
    for i in picks:
        k = int(np.searchsorted(offsets, i, side="right") - 1)
        ws, j = splits[k], int(i - offsets[k])
        past, fut = audit_sample(table, data, int(ws.anchors[j]), past_len, horizon)
        leaks += past.tobytes() != ws.past[j].tobytes() or fut.tobytes() != ws.future[j].tobytes()
    ok = sizes_ok and chrono and leaks == 0
    record_criterion(7, "pipeline conformance", ok,
                     f"{n} windows -> train-pool {pool} / test {len(data.test)}; "
                     f"foresight audit {1000 - leaks}/1000 reproduced")
    assert ok


# ---------------------------------------------------------------------------
# 8. determinism
# ---------------------------------------------------------------------------
DETERMINISM_CONFIG = """
[data]
hours = 900
assets = 3
seed = 5
past_len = 8
median_window = 48

[models]
names = TKAT, TKAN-simple, GRU, MLP
d_model = 4
n_heads = 2
units = 4
grid_range = -3, 3

[training]
learning_rate = 0.005
batch_size = 64
max_epochs = 3

[horizons]
values = 1, 2

[seeds]
values = 0, 1
"""


def test_criterion_8_determinism(tmp_path):
    cfg = parse_config(DETERMINISM_CONFIG)
    write_report(run_benchmark(cfg), tmp_path / "a")
    write_report(run_benchmark(cfg), tmp_path / "b")
    a, b = (tmp_path / "a" / "summary.csv").read_bytes(), (tmp_path / "b" / "summary.csv").read_bytes()
    ok = a == b and b"nan" not in a
    record_criterion(8, "determinism", ok, f"summary.csv {len(a)} bytes, identical={a == b}")
    assert ok
