"""Named model constructors shared by the benchmark, estimators and checkpoints."""
from __future__ import annotations

from dataclasses import asdict, dataclass

from .baselines import build_simple_baseline
from .model import TkatConfig, build_tkat
from .nn import Module
from .spline import SplineGrid

TKAT_FAMILY = {
    "TKAT": ("TKAN", "BASE"),
    "TKATN": ("LSTM", "BASE"),
    "TKAT-A": ("TKAN", "A"),
    "TKATN-A": ("LSTM", "A"),
    "TKAT-B": ("TKAN", "B"),
    "TKATN-B": ("LSTM", "B"),
}
BASELINES = {"TKAN-simple": "TKAN", "GRU": "GRU", "LSTM": "LSTM", "MLP": "MLP"}
MODEL_NAMES = tuple(TKAT_FAMILY) + tuple(BASELINES)


@dataclass
class ModelSize:
    """Width settings. Defaults are the full-size benchmark widths."""

    d_model: int = 100
    n_heads: int = 4
    units: tuple[int, ...] = (100, 100)
    grid_size: int = 5
    spline_order: int = 3
    grid_range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        self.units = tuple(int(u) for u in self.units)
        self.grid_range = tuple(float(v) for v in self.grid_range)
        if not self.units or min(self.units) < 1:
            raise ValueError("units must be a non-empty tuple of positive widths")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["units"] = list(self.units)
        d["grid_range"] = list(self.grid_range)
        return d


def build_model(name: str, n_observed: int, n_known: int, past_len: int, horizon: int,
                seed: int = 0, size: ModelSize | None = None) -> Module:
    """Build a fresh model by benchmark name.

    TKAT-family models receive observed and known inputs separately; the
    simple baselines read the ``n_observed + n_known`` past columns only.
    """
    size = size or ModelSize()
    if name in TKAT_FAMILY:
        cell, variant = TKAT_FAMILY[name]
        return build_tkat(TkatConfig(n_observed=n_observed, n_known=n_known, past_len=past_len,
                                     horizon=horizon, d_model=size.d_model, n_heads=size.n_heads,
                                     cell_kind=cell, variant=variant, grid_size=size.grid_size,
                                     spline_order=size.spline_order, grid_range=size.grid_range,
                                     seed=seed))
    if name in BASELINES:
        grid = SplineGrid(size.grid_size, size.spline_order, *size.grid_range)
        return build_simple_baseline(BASELINES[name], n_observed + n_known, past_len, horizon,
                                     seed=seed, units=size.units, grid=grid)
    raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
