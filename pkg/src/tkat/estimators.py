"""scikit-learn style wrappers around the forecasting models.

A sample is one window: ``past [P, n_observed + n_known]`` plus
``future [tau, n_known]``. Estimators accept either the tuple
``(past, future)`` of 3-D arrays or the packed 2-D layout produced by
:func:`pack_windows`, so they compose with sklearn utilities that expect
``X`` to be a matrix.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .data import WindowSet
from .training import TrainConfig, predict, r_squared, train_loop
from .zoo import MODEL_NAMES, ModelSize, build_model


def pack_windows(past, future) -> np.ndarray:
    """``[n, P, f]`` and ``[n, tau, k]`` -> ``[n, P*f + tau*k]``."""
    past = np.asarray(past, dtype=np.float64)
    future = np.asarray(future, dtype=np.float64)
    if past.ndim != 3 or future.ndim != 3 or past.shape[0] != future.shape[0]:
        raise ValueError(f"expected 3-D past/future with equal batch, got {past.shape} and {future.shape}")
    n = past.shape[0]
    return np.concatenate([past.reshape(n, -1), future.reshape(n, -1)], axis=1)


def unpack_windows(X, past_len: int, horizon: int, n_known: int) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"packed windows must be 2-D, got shape {X.shape}")
    past_width = X.shape[1] - horizon * n_known
    if past_width <= 0 or past_width % past_len:
        raise ValueError(f"{X.shape[1]} columns do not match past_len={past_len}, "
                         f"horizon={horizon}, n_known={n_known}")
    n_features = past_width // past_len
    if n_features < n_known:
        raise ValueError("fewer past features than known features")
    past = X[:, :past_width].reshape(-1, past_len, n_features)
    future = X[:, past_width:].reshape(-1, horizon, n_known)
    return past, future


def check_windows(X, past_len: int, horizon: int, n_known: int) -> tuple[np.ndarray, np.ndarray]:
    """Coerce ``X`` to ``(past, future)`` float64 arrays and reject bad shapes or non-finite values."""
    if isinstance(X, WindowSet):
        past, future = X.past, X.future
    elif isinstance(X, (tuple, list)) and len(X) == 2:
        past, future = (np.asarray(a, dtype=np.float64) for a in X)
    else:
        past, future = unpack_windows(X, past_len, horizon, n_known)
    if past.ndim != 3 or past.shape[1] != past_len:
        raise ValueError(f"past must be [n, {past_len}, features], got {past.shape}")
    if future.ndim != 3 or future.shape[1:] != (horizon, n_known) or future.shape[0] != past.shape[0]:
        raise ValueError(f"future must be [n, {horizon}, {n_known}], got {future.shape}")
    if past.shape[0] == 0:
        raise ValueError("no samples")
    if not (np.isfinite(past).all() and np.isfinite(future).all()):
        raise ValueError("input contains NaN or infinity")
    return past, future


def check_targets(y, n_samples: int, horizon: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1 and horizon == 1:
        y = y[:, None]
    if y.shape != (n_samples, horizon):
        raise ValueError(f"y must be [{n_samples}, {horizon}], got {y.shape}")
    if not np.isfinite(y).all():
        raise ValueError("y contains NaN or infinity")
    return y


class ForecastRegressor(RegressorMixin, BaseEstimator):
    """Any named benchmark model behind ``fit`` / ``predict`` / ``score``.

    ``score`` is R^2 over all horizon steps pooled together.
    """

    def __init__(self, model: str = "TKAT", past_len: int = 30, horizon: int = 1, n_known: int = 2,
                 d_model: int = 100, n_heads: int = 4, units=(100, 100), grid_size: int = 5,
                 spline_order: int = 3, grid_range=(-1.0, 1.0), learning_rate: float = 1e-3,
                 batch_size: int = 128, max_epochs: int = 100, validation_fraction: float = 0.2,
                 seed: int = 0):
        self.model = model
        self.past_len = past_len
        self.horizon = horizon
        self.n_known = n_known
        self.d_model = d_model
        self.n_heads = n_heads
        self.units = units
        self.grid_size = grid_size
        self.spline_order = spline_order
        self.grid_range = grid_range
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _model_name(self) -> str:
        return self.model

    def _size(self) -> ModelSize:
        units = getattr(self, "units", (100, 100))
        return ModelSize(self.d_model, self.n_heads, tuple(units), self.grid_size, self.spline_order,
                         tuple(self.grid_range))

    def fit(self, X, y):
        name = self._model_name()
        if name not in MODEL_NAMES:
            raise ValueError(f"unknown model {name!r}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        past, future = check_windows(X, self.past_len, self.horizon, self.n_known)
        y = check_targets(y, past.shape[0], self.horizon)
        n = past.shape[0]
        n_observed = past.shape[2] - self.n_known
        self.model_ = build_model(name, n_observed, self.n_known, self.past_len, self.horizon,
                                  self.seed, self._size())
        # chronological hold-out: the last fraction of samples watches the callbacks
        n_val = int(round(n * self.validation_fraction))
        windows = WindowSet(past, future, y, np.arange(n))
        if n_val > 0 and n - n_val > 0:
            train, val = windows.subset(slice(0, n - n_val)), windows.subset(slice(n - n_val, n))
        else:
            train, val = windows, None
        cfg = TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                          max_epochs=self.max_epochs, seed=self.seed)
        self.result_ = train_loop(self.model_, train, val, cfg)
        self.history_ = self.result_.history
        self.n_features_in_ = past.shape[2]
        self.n_observed_ = n_observed
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        past, future = check_windows(X, self.past_len, self.horizon, self.n_known)
        if past.shape[2] != self.n_features_in_:
            raise ValueError(f"fitted on {self.n_features_in_} past features, got {past.shape[2]}")
        return predict(self.model_, WindowSet(past, future, np.zeros((past.shape[0], self.horizon)),
                                              np.arange(past.shape[0])))

    def score(self, X, y, sample_weight=None) -> float:
        if sample_weight is not None:
            raise NotImplementedError("sample weights are not supported")
        pred = self.predict(X)
        return r_squared(pred, check_targets(y, pred.shape[0], self.horizon))

    @property
    def n_parameters_(self) -> int:
        check_is_fitted(self, "model_")
        return self.model_.num_parameters()


class TKATRegressor(ForecastRegressor):
    """:class:`ForecastRegressor` fixed to the TKAT family; ``variant`` and ``cell`` pick the member."""

    def __init__(self, variant: str = "BASE", cell: str = "TKAN", past_len: int = 30, horizon: int = 1,
                 n_known: int = 2, d_model: int = 100, n_heads: int = 4, grid_size: int = 5,
                 spline_order: int = 3, grid_range=(-1.0, 1.0), learning_rate: float = 1e-3,
                 batch_size: int = 128, max_epochs: int = 100, validation_fraction: float = 0.2,
                 seed: int = 0):
        self.variant = variant
        self.cell = cell
        self.past_len = past_len
        self.horizon = horizon
        self.n_known = n_known
        self.d_model = d_model
        self.n_heads = n_heads
        self.grid_size = grid_size
        self.spline_order = spline_order
        self.grid_range = grid_range
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _model_name(self) -> str:
        if self.variant not in ("BASE", "A", "B") or self.cell not in ("TKAN", "LSTM"):
            raise ValueError(f"bad variant/cell {self.variant!r}/{self.cell!r}")
        name = "TKAT" if self.cell == "TKAN" else "TKATN"
        return name if self.variant == "BASE" else f"{name}-{self.variant}"
