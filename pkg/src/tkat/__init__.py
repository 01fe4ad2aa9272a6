"""Temporal Kolmogorov-Arnold Transformer forecasting on a small numpy autodiff engine."""
from .tensor import Tensor, backward, finite_diff_check, no_grad
from .spline import KANLinear, SplineGrid, bspline_basis
from .recurrent import CellState, GRUCell, LSTMCell, TKANCell, RecurrentStack
from .fusion import GLU, GRN, VSN
from .attention import MultiHeadAttention
from .model import TKAT, TkatConfig, build_tkat, count_parameters
from .baselines import build_simple_baseline
from .zoo import MODEL_NAMES, ModelSize, build_model
from .data import generate_synthetic, prepare_dataset, read_csv, write_csv
from .training import TrainConfig, callback_update, r_squared, train_loop
from .estimators import ForecastRegressor, TKATRegressor, pack_windows, unpack_windows
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "finite_diff_check", "no_grad",
    "KANLinear", "SplineGrid", "bspline_basis",
    "CellState", "GRUCell", "LSTMCell", "TKANCell", "RecurrentStack",
    "GLU", "GRN", "VSN", "MultiHeadAttention",
    "TKAT", "TkatConfig", "build_tkat", "count_parameters", "build_simple_baseline",
    "MODEL_NAMES", "ModelSize", "build_model",
    "generate_synthetic", "prepare_dataset", "read_csv", "write_csv",
    "TrainConfig", "callback_update", "r_squared", "train_loop",
    "ForecastRegressor", "TKATRegressor", "pack_windows", "unpack_windows",
    "load_checkpoint", "save_checkpoint",
]
