"""Hourly multivariate series: scaling, calendar features, windowing and splits.

Asset notionals are first divided by a trailing moving median that ends
``horizon`` steps before each point, then divided by each asset's maximum
over the training rows. Windows pair ``P`` past rows (all features) with the
calendar features of the next ``horizon`` rows and the scaled target there.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

logger = logging.getLogger(__name__)

TWO_WEEKS_HOURS = 336
N_CALENDAR = 2


class DataError(ValueError):
    """Input data violates a pipeline precondition."""


@dataclass
class RawSeriesTable:
    timestamps: np.ndarray          # datetime64[h], strictly increasing, hourly
    values: np.ndarray              # [n_rows, n_assets], notionals >= 0
    columns: list[str]
    target: str

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[h]")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape != (len(self.timestamps), len(self.columns)):
            raise DataError("values must be [n_rows, n_columns] matching timestamps and column names")
        steps = np.diff(self.timestamps).astype(np.int64)
        if np.any(steps != 1):
            raise DataError("timestamps must be consecutive hours with no gaps")
        if not np.isfinite(self.values).all() or np.any(self.values < 0):
            raise DataError("notionals must be finite and non-negative")
        if self.target not in self.columns:
            raise DataError(f"target column {self.target!r} not in {self.columns}")

    @property
    def target_index(self) -> int:
        return self.columns.index(self.target)

    def head(self, n_rows: int) -> "RawSeriesTable":
        return RawSeriesTable(self.timestamps[:n_rows], self.values[:n_rows], list(self.columns), self.target)


def read_csv(path, target: str | None = None) -> RawSeriesTable:
    """Read ``timestamp,ASSET1,...,ASSETn``; the target defaults to the first asset."""
    frame = pd.read_csv(path)
    if frame.columns[0] != "timestamp":
        raise DataError("first CSV column must be 'timestamp'")
    ts = pd.to_datetime(frame["timestamp"], utc=True).dt.tz_localize(None).to_numpy().astype("datetime64[h]")
    cols = [str(c) for c in frame.columns[1:]]
    return RawSeriesTable(ts, frame[cols].to_numpy(dtype=np.float64), cols, target or cols[0])


def write_csv(table: RawSeriesTable, path) -> None:
    frame = pd.DataFrame(table.values, columns=table.columns)
    frame.insert(0, "timestamp", [f"{t}:00:00Z" for t in table.timestamps.astype(str)])
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def generate_synthetic(hours: int = 4000, assets: int = 5, seed: int = 0,
                       start: str = "2020-01-06T00") -> RawSeriesTable:
    """Notionals with multiplicative daily and weekly seasonality and lognormal AR(1) noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(hours)
    values = np.empty((hours, assets))
    for a in range(assets):
        level = np.exp(rng.uniform(3.0, 8.0))
        day_amp, week_amp = rng.uniform(0.3, 0.6), rng.uniform(0.1, 0.3)
        day_phase, week_phase = rng.uniform(0, 2 * np.pi, size=2)
        daily = 1.0 + day_amp * np.sin(2 * np.pi * t / 24 + day_phase)
        weekly = 1.0 + week_amp * np.sin(2 * np.pi * t / 168 + week_phase)
        phi, sigma = rng.uniform(0.6, 0.9), rng.uniform(0.15, 0.3)
        z = np.empty(hours)
        z[0] = rng.normal(0.0, sigma / np.sqrt(1 - phi ** 2))
        shocks = rng.normal(0.0, sigma, size=hours)
        for i in range(1, hours):
            z[i] = phi * z[i - 1] + shocks[i]
        values[:, a] = level * daily * weekly * np.exp(z)
    ts = np.datetime64(start, "h") + t.astype("timedelta64[h]")
    cols = [f"ASSET{a + 1}" for a in range(assets)]
    return RawSeriesTable(ts, values, cols, cols[0])


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------
def trailing_medians(series: np.ndarray, window: int) -> np.ndarray:
    """``out[s] = median(series[s : s + window])``; even windows average the two central values."""
    x = np.asarray(series, dtype=np.float64)
    flat = x.reshape(x.shape[0], -1)
    med = pd.DataFrame(flat).rolling(window).median().to_numpy()[window - 1:]
    return med.reshape((med.shape[0],) + x.shape[1:])


def moving_median_scale(series, window: int = TWO_WEEKS_HOURS, horizon: int = 1) -> np.ndarray:
    """Divide each point by the median of the ``window`` values ending ``horizon`` steps earlier.

    ``out[t] = x[t] / median(x[t-horizon-window+1 .. t-horizon])``. Points
    without a full window (the first ``window + horizon - 1``) and points whose
    median is zero are NaN. Works column-wise on 2-D input.
    """
    x = np.asarray(series, dtype=np.float64)
    if window < 1 or horizon < 1:
        raise DataError("window and horizon must be >= 1")
    if x.shape[0] <= window + horizon:
        raise DataError(f"series of length {x.shape[0]} too short for window={window}, horizon={horizon}")
    lag = window + horizon - 1
    med = trailing_medians(x, window)[: x.shape[0] - lag]
    out = np.full(x.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = x[lag:] / med
    scaled[med == 0] = np.nan
    out[lag:] = scaled
    return out


class MovingMedianScaler(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`moving_median_scale`."""

    def __init__(self, window: int = TWO_WEEKS_HOURS, horizon: int = 1):
        self.window = window
        self.horizon = horizon

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return moving_median_scale(X, self.window, self.horizon)


class MaxScaler(TransformerMixin, BaseEstimator):
    """Per-column division by the maximum seen in ``fit`` (the minimum is taken as 0).

    Values above the fitted maximum map above 1 and are left unclipped.
    """

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        with np.errstate(invalid="ignore"):
            maxima = np.nanmax(X, axis=0)
        if not np.all(maxima > 0):
            raise DataError("training maximum must be positive for every column")
        self.max_ = maxima
        return self

    def transform(self, X):
        check_is_fitted(self, "max_")
        X = np.asarray(X, dtype=np.float64)
        return X / (self.max_ if X.ndim > 1 else self.max_[0])


def minmax_fit_transform(series, train_range: slice | np.ndarray):
    """Fit the max on ``series[train_range]`` and scale the whole series."""
    scaler = MaxScaler().fit(np.asarray(series)[train_range])
    return scaler.transform(series), scaler


# ---------------------------------------------------------------------------
# calendar, windows, splits
# ---------------------------------------------------------------------------
def calendar_features(timestamps) -> np.ndarray:
    """``[hour / 23, weekday / 6]`` with Monday = 0."""
    ts = np.asarray(timestamps, dtype="datetime64[h]")
    hours = ts.astype(np.int64)
    hour = hours % 24
    days = hours // 24
    weekday = (days + 3) % 7  # 1970-01-01 was a Thursday
    return np.stack([hour / 23.0, weekday / 6.0], axis=1)


@dataclass
class WindowSet:
    past: np.ndarray        # [n, P, n_features]
    future: np.ndarray      # [n, tau, n_known]
    target: np.ndarray      # [n, tau]
    anchors: np.ndarray     # [n] row index of the last past row

    def __len__(self) -> int:
        return len(self.anchors)

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.past[idx], self.future[idx], self.target[idx], self.anchors[idx])


def make_windows(features: np.ndarray, target: np.ndarray, known_columns, past_len: int,
                 horizon: int, anchors: np.ndarray | None = None) -> WindowSet:
    """Slide a window with stride 1; anchor ``t`` covers past rows ``t-P+1..t`` and targets ``t+1..t+tau``."""
    features = np.asarray(features, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    n_rows = features.shape[0]
    if n_rows < past_len + horizon:
        raise DataError(f"{n_rows} rows cannot hold a window of {past_len} + {horizon}")
    if anchors is None:
        anchors = np.arange(past_len - 1, n_rows - horizon)
    anchors = np.asarray(anchors, dtype=np.int64)
    offs_past = np.arange(-past_len + 1, 1)
    offs_fut = np.arange(1, horizon + 1)
    past = features[anchors[:, None] + offs_past]
    future = features[anchors[:, None] + offs_fut][..., list(known_columns)]
    y = target[anchors[:, None] + offs_fut]
    return WindowSet(past, future, y, anchors)


def split_indices(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Chronological 80/20 train-pool/test split; the last 20% of the pool is validation."""
    if n < 10:
        raise DataError(f"need at least 10 samples to split, got {n}")
    pool = (4 * n) // 5
    train = (4 * pool) // 5
    idx = np.arange(n)
    return idx[:train], idx[train:pool], idx[pool:]


def split_dataset(samples: WindowSet):
    tr, va, te = split_indices(len(samples))
    return samples.subset(tr), samples.subset(va), samples.subset(te)


@dataclass
class ScalerState:
    median_window: int
    horizon_shift: int
    train_max: np.ndarray
    columns: list[str]


@dataclass
class PreparedData:
    train: WindowSet
    val: WindowSet
    test: WindowSet
    scaler: ScalerState
    n_observed: int
    n_known: int
    columns: list[str]
    dropped_rows: int = 0
    feature_table: np.ndarray = field(default=None, repr=False)

    @property
    def n_features(self) -> int:
        return self.n_observed + self.n_known


def scale_rows(values: np.ndarray, timestamps, scaler: ScalerState) -> np.ndarray:
    """Feature rows ``[assets scaled..., hour, weekday]`` from raw notionals and a fitted scaler."""
    scaled = moving_median_scale(values, scaler.median_window, scaler.horizon_shift) / scaler.train_max
    return np.concatenate([scaled, calendar_features(timestamps)], axis=1)


def prepare_dataset(table: RawSeriesTable, past_len: int, horizon: int,
                    median_window: int = TWO_WEEKS_HOURS) -> PreparedData:
    """Scale, window and split ``table`` without letting test rows inform the scaling."""
    n_assets = len(table.columns)
    med_scaled = moving_median_scale(table.values, median_window, horizon)
    invalid = np.isnan(med_scaled).any(axis=1)
    lag = median_window + horizon - 1
    zero_med = int(invalid[lag:].sum())
    if zero_med:
        logger.info("dropping %d rows with a zero moving median", zero_med)
    # an anchor is usable when every row its window touches is valid
    bad = np.concatenate([[0], np.cumsum(invalid)])
    anchors = np.arange(past_len - 1, len(invalid) - horizon)
    lo, hi = anchors - past_len + 1, anchors + horizon + 1
    anchors = anchors[bad[hi] - bad[lo] == 0]
    if len(anchors) < 10:
        raise DataError("too few usable windows after scaling")
    tr, va, te = split_indices(len(anchors))
    last_train_row = anchors[va[-1] if len(va) else tr[-1]] + horizon
    rows = np.arange(len(invalid))
    train_rows = (rows <= last_train_row) & ~invalid
    maxscaler = MaxScaler().fit(med_scaled[train_rows])
    scaler = ScalerState(median_window, horizon, maxscaler.max_, list(table.columns))
    features = np.concatenate([maxscaler.transform(med_scaled), calendar_features(table.timestamps)], axis=1)
    known = list(range(n_assets, n_assets + N_CALENDAR))
    windows = make_windows(np.nan_to_num(features, nan=0.0), features[:, table.target_index],
                           known, past_len, horizon, anchors)
    return PreparedData(windows.subset(tr), windows.subset(va), windows.subset(te), scaler,
                        n_observed=n_assets, n_known=N_CALENDAR, columns=list(table.columns),
                        dropped_rows=zero_med, feature_table=features)


def audit_sample(table: RawSeriesTable, data: PreparedData, anchor: int, past_len: int, horizon: int):
    """Rebuild the window at ``anchor`` from rows ``<= anchor`` plus future calendar values.

    Returns ``(past, future_known)``; a leak-free pipeline reproduces the stored sample exactly.
    """
    visible = table.values[: anchor + 1]
    past_rows = scale_rows(visible, table.timestamps[: anchor + 1], data.scaler)[anchor - past_len + 1:]
    fut_ts = table.timestamps[anchor + 1: anchor + horizon + 1]
    return past_rows, calendar_features(fut_ts)


# ---------------------------------------------------------------------------
# cache
# ---------------------------------------------------------------------------
def dataset_cache_key(csv_path, past_len: int, horizon: int, median_window: int, target: str | None) -> str:
    h = hashlib.sha256(Path(csv_path).read_bytes())
    h.update(json.dumps([past_len, horizon, median_window, target]).encode())
    return h.hexdigest()


def load_prepared_cached(csv_path, past_len: int, horizon: int, median_window: int = TWO_WEEKS_HOURS,
                         target: str | None = None, cache_dir=None) -> PreparedData:
    """:func:`prepare_dataset` on a CSV, memoised as ``<cache_dir>/<content hash>.npz``."""
    if cache_dir is not None:
        path = Path(cache_dir) / f"{dataset_cache_key(csv_path, past_len, horizon, median_window, target)}.npz"
        if path.exists():
            return _load_prepared(path)
    data = prepare_dataset(read_csv(csv_path, target), past_len, horizon, median_window)
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        _save_prepared(data, path)
    return data


def _save_prepared(data: PreparedData, path: Path) -> None:
    arrays = {}
    for split in ("train", "val", "test"):
        ws: WindowSet = getattr(data, split)
        for f in ("past", "future", "target", "anchors"):
            arrays[f"{split}_{f}"] = getattr(ws, f)
    meta = dict(median_window=data.scaler.median_window, horizon_shift=data.scaler.horizon_shift,
                columns=data.columns, n_observed=data.n_observed, n_known=data.n_known,
                dropped_rows=data.dropped_rows)
    np.savez(path, train_max=data.scaler.train_max, meta=np.array(json.dumps(meta)), **arrays)


def _load_prepared(path: Path) -> PreparedData:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        sets = {s: WindowSet(*(z[f"{s}_{f}"] for f in ("past", "future", "target", "anchors")))
                for s in ("train", "val", "test")}
        scaler = ScalerState(meta["median_window"], meta["horizon_shift"], z["train_max"], meta["columns"])
    return PreparedData(sets["train"], sets["val"], sets["test"], scaler, meta["n_observed"],
                        meta["n_known"], meta["columns"], meta["dropped_rows"])
