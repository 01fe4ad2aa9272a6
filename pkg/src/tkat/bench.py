"""Multi-seed benchmark harness: config parsing, cell execution and report files."""
from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import logging
import os
import platform
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import PreparedData, TWO_WEEKS_HOURS, generate_synthetic, prepare_dataset, read_csv
from .model import TKAT
from .tensor import no_grad
from .training import TrainConfig, TrainingDiverged, TrainingTimeout, train_loop
from .zoo import MODEL_NAMES, ModelSize, build_model

logger = logging.getLogger(__name__)

SUMMARY_NOTE = "std is the population standard deviation over successful seeds"


class BenchConfigError(ValueError):
    pass


@dataclass
class BenchConfig:
    models: list[str]
    horizons: list[int]
    seeds: list[int]
    past_len: int = 30
    data_path: str | None = None
    synthetic_hours: int = 4000
    synthetic_assets: int = 5
    data_seed: int = 0
    median_window: int = TWO_WEEKS_HOURS
    size: ModelSize = field(default_factory=ModelSize)
    train: TrainConfig = field(default_factory=TrainConfig)
    cell_timeout_s: float | None = None
    export_weights: bool = False

    def __post_init__(self):
        if not self.models:
            raise BenchConfigError("model list is empty")
        unknown = [m for m in self.models if m not in MODEL_NAMES]
        if unknown:
            raise BenchConfigError(f"unknown model(s) {unknown}; choose from {', '.join(MODEL_NAMES)}")
        if len(set(self.models)) != len(self.models):
            raise BenchConfigError("duplicate model names")
        if not self.horizons or min(self.horizons) < 1:
            raise BenchConfigError("need at least one positive horizon")
        if not self.seeds:
            raise BenchConfigError("need at least one seed")
        if self.data_path is not None and not Path(self.data_path).exists():
            raise BenchConfigError(f"dataset {self.data_path} not found")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["size"] = self.size.to_dict()
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def parse_config(text: str, base_dir=None) -> BenchConfig:
    """Parse the INI benchmark config. Sections: data, models, training, horizons, seeds."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise BenchConfigError(f"malformed config: {err}") from err
    for sec in ("models", "horizons", "seeds"):
        if not cp.has_section(sec):
            raise BenchConfigError(f"missing [{sec}] section")
    data = cp["data"] if cp.has_section("data") else {}
    mod = cp["models"]
    tr = cp["training"] if cp.has_section("training") else {}
    path = data.get("path") or None
    if path is not None and base_dir is not None and not Path(path).is_absolute():
        path = str(Path(base_dir) / path)
    try:
        size = ModelSize(d_model=int(mod.get("d_model", 100)), n_heads=int(mod.get("n_heads", 4)),
                         units=tuple(_ints(mod.get("units", "100, 100"))),
                         grid_size=int(mod.get("grid_size", 5)), spline_order=int(mod.get("spline_order", 3)),
                         grid_range=tuple(_floats(mod.get("grid_range", "-1, 1")))[:2])
        train = TrainConfig(learning_rate=float(tr.get("learning_rate", 1e-3)),
                            batch_size=int(tr.get("batch_size", 128)),
                            max_epochs=int(tr.get("max_epochs", 100)))
        timeout = tr.get("cell_timeout_s")
        return BenchConfig(
            models=[m.strip() for m in mod.get("names", "").replace("\n", ",").split(",") if m.strip()],
            horizons=_ints(cp["horizons"].get("values", "")),
            seeds=_ints(cp["seeds"].get("values", "")),
            past_len=int(data.get("past_len", 30)),
            data_path=path,
            synthetic_hours=int(data.get("hours", 4000)),
            synthetic_assets=int(data.get("assets", 5)),
            data_seed=int(data.get("seed", 0)),
            median_window=int(data.get("median_window", TWO_WEEKS_HOURS)),
            size=size, train=train,
            cell_timeout_s=float(timeout) if timeout else None,
            export_weights=str(tr.get("export_weights", "false")).lower() in ("1", "true", "yes"),
        )
    except BenchConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise BenchConfigError(str(err)) from err


def load_config(path) -> BenchConfig:
    p = Path(path)
    if not p.exists():
        raise BenchConfigError(f"config file {p} not found")
    return parse_config(p.read_text(), base_dir=p.parent)


# ---------------------------------------------------------------------------
# cells
# ---------------------------------------------------------------------------
@dataclass
class CellResult:
    model: str
    horizon: int
    seed: int
    status: str
    r2: float = float("nan")
    r2_step_avg: float = float("nan")
    mse: float = float("nan")
    rmse_per_step: list[float] = field(default_factory=list)
    n_params: int = 0
    epochs: int = 0
    best_epoch: int = -1
    wall_time_s: float = 0.0
    error: str = ""
    weights: dict | None = field(default=None, repr=False)


def _interpretability(model: TKAT, data: PreparedData, batch: int = 256) -> dict:
    """Test-set mean VSN weights and mean attention maps of a trained TKAT-family model."""
    ws = data.test.subset(slice(0, min(batch, len(data.test))))
    with no_grad():
        _, diag = model(ws.past, ws.future, return_diagnostics=True)
    return {"past_vsn": diag["past_vsn_weights"].mean(axis=(0, 1)).tolist(),
            "future_vsn": diag["future_vsn_weights"].mean(axis=(0, 1)).tolist(),
            "attention": diag["attention_weights"].mean(axis=0).tolist()}


def run_cell(name: str, horizon: int, seed: int, data: PreparedData, cfg: BenchConfig) -> CellResult:
    start = time.perf_counter()
    res = CellResult(name, horizon, seed, "ok")
    try:
        model = build_model(name, data.n_observed, data.n_known, cfg.past_len, horizon, seed, cfg.size)
        res.n_params = model.num_parameters()
        tcfg = TrainConfig(**{**asdict(cfg.train), "seed": seed, "time_budget_s": cfg.cell_timeout_s})
        out = train_loop(model, data.train, data.val, tcfg, test=data.test)
        m = out.test_metrics
        res.r2, res.mse = m["r2_mean"], m["mse"]
        res.r2_step_avg = float(np.mean(m["r2_per_step"]))
        res.rmse_per_step = m["rmse_per_step"]
        res.epochs, res.best_epoch = len(out.history), out.best_epoch
        if cfg.export_weights and isinstance(model, TKAT) and seed == cfg.seeds[0]:
            res.weights = _interpretability(model, data)
    except TrainingTimeout as err:
        res.status, res.error = "timeout", str(err)
    except TrainingDiverged as err:
        res.status, res.error = "diverged", str(err)
    except Exception as err:  # a failing cell must not take the benchmark down
        res.status, res.error = "failed", f"{type(err).__name__}: {err}"
    res.wall_time_s = time.perf_counter() - start
    if res.status != "ok":
        logger.warning("cell %s h=%d seed=%d %s: %s", name, horizon, seed, res.status, res.error)
    return res


def load_table(cfg: BenchConfig):
    if cfg.data_path is not None:
        return read_csv(cfg.data_path)
    return generate_synthetic(cfg.synthetic_hours, cfg.synthetic_assets, cfg.data_seed)


def _cell_task(args):
    name, horizon, seed, data, cfg = args
    return run_cell(name, horizon, seed, data, cfg)


def resolve_jobs(jobs: int | None) -> int:
    env = os.environ.get("BENCH_THREADS")
    if env:
        jobs = int(env)
    return max(1, int(jobs or 1))


@dataclass
class BenchmarkReport:
    config: BenchConfig
    cells: list[CellResult]
    data_hash: str
    wall_time_s: float = 0.0

    def ok_cells(self, model: str, horizon: int) -> list[CellResult]:
        return [c for c in self.cells if c.model == model and c.horizon == horizon and c.status == "ok"]

    def aggregate(self, model: str, horizon: int) -> tuple[float, float]:
        """Mean and population std of test R^2 over successful seeds (NaN when none succeeded)."""
        vals = np.array([c.r2 for c in self.ok_cells(model, horizon)])
        if vals.size == 0:
            return float("nan"), float("nan")
        return float(vals.mean()), float(vals.std())


def run_benchmark(cfg: BenchConfig, jobs: int | None = 1, progress=None) -> BenchmarkReport:
    start = time.perf_counter()
    table = load_table(cfg)
    data_hash = hashlib.sha256(np.ascontiguousarray(table.values).tobytes()
                               + table.timestamps.astype("int64").tobytes()).hexdigest()
    tasks = []
    for h in cfg.horizons:
        data = prepare_dataset(table, cfg.past_len, h, cfg.median_window)
        tasks += [(name, h, s, data, cfg) for name in cfg.models for s in cfg.seeds]
    jobs = resolve_jobs(jobs)
    cells: list[CellResult] = []
    if jobs == 1:
        for t in tasks:
            cells.append(_cell_task(t))
            if progress:
                progress(cells[-1])
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for c in pool.map(_cell_task, tasks):
                cells.append(c)
                if progress:
                    progress(c)
    return BenchmarkReport(cfg, cells, data_hash, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------
def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if np.isnan(x) else repr(x)
    return str(x)


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def report_files(report: BenchmarkReport) -> dict[str, str]:
    """Render every output file to text (file name -> contents)."""
    cfg = report.config
    files = {}
    files["results.csv"] = _csv_text(
        ["model", "horizon", "seed", "status", "r2", "r2_step_avg", "mse", "n_params", "epochs",
         "best_epoch", "wall_time_s", "error"],
        [[c.model, c.horizon, c.seed, c.status, c.r2, c.r2_step_avg, c.mse, c.n_params, c.epochs,
          c.best_epoch, round(c.wall_time_s, 3), c.error] for c in report.cells])
    header = ["horizon"] + [f"{m}_{stat}" for m in cfg.models for stat in ("mean", "std")]
    rows = []
    for h in cfg.horizons:
        row = [h]
        for m in cfg.models:
            row += list(report.aggregate(m, h))
        rows.append(row)
    files["summary.csv"] = _csv_text(header, rows)
    counts = {}
    for c in report.cells:
        if c.n_params:
            counts[(c.model, c.horizon)] = c.n_params
    files["params.csv"] = _csv_text(["model"] + [f"h{h}" for h in cfg.horizons],
                                    [[m] + [counts.get((m, h), 0) for h in cfg.horizons] for m in cfg.models])
    rmse_rows = []
    for m in cfg.models:
        for h in cfg.horizons:
            per_seed = [c.rmse_per_step for c in report.ok_cells(m, h)]
            if not per_seed:
                continue
            arr = np.array(per_seed)
            for k in range(h):
                rmse_rows.append([m, h, k + 1, float(arr[:, k].mean()), float(arr[:, k].std())])
    files["rmse_by_step.csv"] = _csv_text(["model", "horizon", "step", "rmse_mean", "rmse_std"], rmse_rows)
    if cfg.export_weights:
        vsn_rows, attn_rows = [], []
        for c in report.cells:
            if not c.weights:
                continue
            for block in ("past_vsn", "future_vsn"):
                for j, w in enumerate(c.weights[block]):
                    vsn_rows.append([c.model, c.horizon, block, j, w])
            for head, mat in enumerate(c.weights["attention"]):
                for q, row in enumerate(mat):
                    for k, w in enumerate(row):
                        attn_rows.append([c.model, c.horizon, head, q, k, w])
        files["vsn_weights.csv"] = _csv_text(["model", "horizon", "block", "variable", "weight"], vsn_rows)
        files["attention.csv"] = _csv_text(["model", "horizon", "head", "query", "key", "weight"], attn_rows)
    manifest = {
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "data_sha256": report.data_hash,
        "seeds": cfg.seeds,
        "cells": len(report.cells),
        "failed_cells": sum(c.status != "ok" for c in report.cells),
        "std": SUMMARY_NOTE,
        "versions": {"python": platform.python_version(), "numpy": np.__version__},
        "wall_time_s": round(report.wall_time_s, 3),
    }
    files["manifest.json"] = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    return files


def write_report(report: BenchmarkReport, out_dir) -> list[Path]:
    """Write every report file; each lands via an atomic rename so no half-written file is left behind."""
    out = Path(out_dir)
    files = report_files(report)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in files.items():
        fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out / name)
        written.append(out / name)
    return written


def read_summary(path) -> dict[int, dict[str, tuple[float, float]]]:
    """Parse ``summary.csv`` back into ``{horizon: {model: (mean, std)}}``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    models = [h[: -len("_mean")] for h in header[1::2]]
    out = {}
    for r in body:
        vals = [float(v) for v in r[1:]]
        out[int(r[0])] = {m: (vals[2 * i], vals[2 * i + 1]) for i, m in enumerate(models)}
    return out
