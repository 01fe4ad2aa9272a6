"""Loss, Adam, plateau/early-stopping callbacks, metrics and the training loop."""
from __future__ import annotations

import csv
import enum
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import WindowSet
from .nn import Module
from .tensor import NonFiniteError, ShapeError, Tensor, backward, no_grad

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class TrainingTimeout(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 100
    early_stop_patience: int = 6
    plateau_patience: int = 3
    plateau_factor: float = 0.5
    seed: int = 0
    time_budget_s: float | None = None

    def __post_init__(self):
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise ValueError("patience values must be positive")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError("plateau_factor must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


# ---------------------------------------------------------------------------
# loss and metrics
# ---------------------------------------------------------------------------
def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared errors over every element."""
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    return (pred - target).square().mean()


def r_squared(pred, target) -> float:
    """``1 - SS_res / SS_tot`` over all elements (inputs are flattened)."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    y = np.asarray(target, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise ShapeError(f"prediction {p.shape} and target {y.shape} differ")
    if y.size < 2:
        raise ValueError("r_squared needs at least two points")
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("r_squared undefined for a constant target")
    return 1.0 - float(((p - y) ** 2).sum()) / ss_tot


def forecast_metrics(pred: np.ndarray, target: np.ndarray) -> dict:
    pred, target = np.asarray(pred), np.asarray(target)
    err = pred - target
    return {
        "r2_mean": r_squared(pred, target),
        "r2_per_step": [r_squared(pred[:, k], target[:, k]) for k in range(target.shape[1])],
        "rmse_per_step": np.sqrt((err ** 2).mean(axis=0)).tolist(),
        "mse": float((err ** 2).mean()),
    }


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------
@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7

    @classmethod
    def zeros_like(cls, params: list[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float):
    """One bias-corrected Adam update. Returns new parameter arrays and a new state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimiser state differ in length")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch in adam_step: {p.shape} vs {g.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3):
        self.params = params
        self.lr = lr
        self.state = AdamState.zeros_like([p.data for p in params])

    def step(self, grads: dict[Tensor, np.ndarray]) -> None:
        g = [grads.get(p, np.zeros(p.shape)) for p in self.params]
        new, self.state = adam_step([p.data for p in self.params], g, self.state, self.lr)
        for p, arr in zip(self.params, new):
            p.data = arr


# ---------------------------------------------------------------------------
# callbacks
# ---------------------------------------------------------------------------
class Action(str, enum.Enum):
    CONTINUE = "CONTINUE"
    REDUCE_LR = "REDUCE_LR"
    STOP_RESTORE_BEST = "STOP_RESTORE_BEST"


@dataclass
class CallbackState:
    early_stop_patience: int = 6
    plateau_patience: int = 3
    best_loss: float = float("inf")
    best_epoch: int = -1
    best_weights: dict | None = None
    since_best: int = 0
    since_reduce: int = 0
    epoch: int = -1


def callback_update(val_loss: float, state: CallbackState,
                    snapshot: Callable[[], dict] | None = None) -> Action:
    """Advance both callbacks by one epoch.

    A strict improvement resets both counters and snapshots the weights.
    Otherwise the plateau counter triggers REDUCE_LR every ``plateau_patience``
    epochs (resetting after each reduction) and the early-stop counter
    triggers STOP_RESTORE_BEST after ``early_stop_patience`` epochs; stopping
    takes precedence.
    """
    state.epoch += 1
    if val_loss < state.best_loss:
        state.best_loss = val_loss
        state.best_epoch = state.epoch
        state.best_weights = snapshot() if snapshot is not None else None
        state.since_best = state.since_reduce = 0
        return Action.CONTINUE
    state.since_best += 1
    state.since_reduce += 1
    if state.since_best >= state.early_stop_patience:
        return Action.STOP_RESTORE_BEST
    if state.since_reduce >= state.plateau_patience:
        state.since_reduce = 0
        return Action.REDUCE_LR
    return Action.CONTINUE


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------
@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    action: str


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: int
    best_val_loss: float
    test_metrics: dict | None = None
    wall_time_s: float = 0.0
    extra: dict = field(default_factory=dict)


def predict(model, windows: WindowSet, batch_size: int = 512) -> np.ndarray:
    out = []
    with no_grad():
        for s in range(0, len(windows), batch_size):
            sl = slice(s, s + batch_size)
            out.append(model(windows.past[sl], windows.future[sl]).data)
    return np.concatenate(out, axis=0)


def evaluate_loss(model, windows: WindowSet, batch_size: int = 512) -> float:
    pred = predict(model, windows, batch_size)
    return float(((pred - windows.target) ** 2).mean())


def train_loop(model: Module, train: WindowSet, val: WindowSet | None, config: TrainConfig,
               test: WindowSet | None = None) -> TrainResult:
    """Mini-batch Adam with plateau LR halving, early stopping and best-weight restore.

    Without a validation set the callbacks watch the training loss. The model
    always ends holding the weights with the lowest monitored loss.
    """
    if len(train) == 0 or (val is not None and len(val) == 0):
        raise ValueError("training and validation splits must be non-empty")
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = Adam(params, config.learning_rate)
    cb = CallbackState(config.early_stop_patience, config.plateau_patience)
    history: list[EpochRecord] = []
    n = len(train)
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            try:
                loss = mse_loss(model(train.past[idx], train.future[idx]), train.target[idx])
            except NonFiniteError as err:
                raise TrainingDiverged(f"non-finite values at epoch {epoch}, batch starting {s}: {err}") from err
            total += loss.item() * len(idx)
            opt.step(backward(loss))
            if config.time_budget_s is not None and time.perf_counter() - start > config.time_budget_s:
                raise TrainingTimeout(f"time budget of {config.time_budget_s}s exceeded at epoch {epoch}")
        train_loss = total / n
        try:
            monitored = evaluate_loss(model, val) if val is not None else evaluate_loss(model, train)
        except NonFiniteError as err:
            raise TrainingDiverged(f"non-finite validation output at epoch {epoch}: {err}") from err
        lr_used = opt.lr
        action = callback_update(monitored, cb, model.state_dict)
        history.append(EpochRecord(epoch, train_loss, monitored, lr_used, action.value))
        logger.debug("epoch %d train=%.6g val=%.6g lr=%.3g %s", epoch, train_loss, monitored, lr_used, action.value)
        if action is Action.REDUCE_LR:
            opt.lr *= config.plateau_factor
        elif action is Action.STOP_RESTORE_BEST:
            break
    if cb.best_weights is not None:
        model.load_state_dict(cb.best_weights)
    result = TrainResult(history, cb.best_epoch, cb.best_loss)
    if test is not None:
        result.test_metrics = forecast_metrics(predict(model, test), test.target)
    result.wall_time_s = time.perf_counter() - start
    return result


def write_history_csv(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr", "action"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.lr), r.action])


def write_metrics_json(result: TrainResult, n_params: int, path) -> None:
    payload = dict(result.test_metrics or {})
    payload.update(n_params=n_params, wall_time_s=result.wall_time_s)
    Path(path).write_text(json.dumps(payload, indent=2))
