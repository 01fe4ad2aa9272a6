"""TKAT assembly, its LSTM ablation and the A/B variants."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import (MultiHeadAttention, OutputHead, flatten_fully_aware, flatten_heads,
                        head_outputs, multi_head_forward, sinusoidal_encoding)
from .fusion import GLU, GRN, VSN, FeatureEmbedding, LayerNorm
from .nn import Module
from .recurrent import CELL_KINDS, RecurrentStack
from .spline import SplineGrid
from .tensor import Tensor, ShapeError, concat

VARIANTS = ("BASE", "A", "B")
FLATTEN_MODES = ("sequence", "heads")


@dataclass
class TkatConfig:
    n_observed: int
    n_known: int
    past_len: int = 30
    horizon: int = 1
    d_model: int = 100
    n_heads: int = 4
    n_recurrent_layers: int = 1
    cell_kind: str = "TKAN"
    variant: str = "BASE"
    grid_size: int = 5
    spline_order: int = 3
    grid_range: tuple[float, float] = (-1.0, 1.0)
    n_sublayers: int = 1
    candidate_activation: str = "sigmoid"
    embed_dim: int = 1
    flatten_mode: str = "sequence"
    positional_encoding: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1 or self.past_len < 1:
            raise ValueError("horizon and past_len must be >= 1")
        if self.n_observed < 0 or self.n_known < 1:
            raise ValueError("TKAT needs n_observed >= 0 and at least one known input for the decoder")
        if self.cell_kind not in ("TKAN", "LSTM"):
            raise ValueError(f"cell_kind must be TKAN or LSTM, got {self.cell_kind!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.flatten_mode not in FLATTEN_MODES:
            raise ValueError(f"unknown flatten_mode {self.flatten_mode!r}")
        if self.flatten_mode == "heads" and self.variant != "BASE":
            raise ValueError("per-head flattening is only defined for the BASE variant")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.n_recurrent_layers < 1:
            raise ValueError("need at least one recurrent layer")
        self.grid_range = tuple(float(v) for v in self.grid_range)

    @property
    def n_past_features(self) -> int:
        return self.n_observed + self.n_known

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid_range"] = list(self.grid_range)
        return d


class TKAT(Module):
    """Encoder/decoder recurrent stacks between variable selection and
    multi-head self-attention over the full (past + future) sequence, read
    out by a linear head on the flattened attention output."""

    def __init__(self, config: TkatConfig):
        cfg = config
        self._config = cfg
        d, e = cfg.d_model, cfg.embed_dim
        # one independent stream per component keeps shared parts identical across ablations
        names = ["past_embedding", "future_embedding", "past_vsn", "future_vsn", "encoder", "decoder",
                 "pre_attention_grn", "attention", "post_attention", "post_grn", "final_gate", "head"]
        seeds = np.random.SeedSequence(cfg.seed).spawn(len(names))
        rng = {n: np.random.default_rng(s) for n, s in zip(names, seeds)}
        grid = SplineGrid(cfg.grid_size, cfg.spline_order, *cfg.grid_range)
        tkan_opts = {}
        if cfg.cell_kind == "TKAN":
            tkan_opts = dict(grid=grid, n_sublayers=cfg.n_sublayers,
                             candidate_activation=cfg.candidate_activation)
        layers = [d] * cfg.n_recurrent_layers

        self.past_embedding = FeatureEmbedding(cfg.n_past_features, rng["past_embedding"], e)
        self.future_embedding = FeatureEmbedding(cfg.n_known, rng["future_embedding"], e)
        self.past_vsn = VSN(cfg.n_past_features, d, rng["past_vsn"], e)
        self.future_vsn = VSN(cfg.n_known, d, rng["future_vsn"], e)
        self.encoder = RecurrentStack(cfg.cell_kind, d, layers, rng["encoder"], **tkan_opts)
        self.decoder = RecurrentStack(cfg.cell_kind, d, layers, rng["decoder"], **tkan_opts)
        self.pre_attention_grn = GRN(d, d, rng["pre_attention_grn"])
        self.attention = MultiHeadAttention(d, cfg.n_heads, rng["attention"],
                                            combine=cfg.flatten_mode == "sequence")
        self.post_attention_glu = self.post_attention_norm = None
        self.post_grn = self.final_glu = self.final_norm = None
        if cfg.variant in ("A", "B"):
            self.post_attention_glu = GLU(d, rng["post_attention"])
            self.post_attention_norm = LayerNorm(d)
        if cfg.variant == "B":
            self.post_grn = GRN(d, d, rng["post_grn"])
            self.final_glu = GLU(d, rng["final_gate"])
            self.final_norm = LayerNorm(d)
        T = cfg.past_len + cfg.horizon
        flat = T * d if cfg.flatten_mode == "sequence" else cfg.n_heads * T * self.attention.d_value
        self.head = OutputHead(flat, cfg.horizon, rng["head"])

    @property
    def config(self) -> TkatConfig:
        return self._config

    def __call__(self, past, future, return_diagnostics: bool = False):
        return tkat_forward(self, past, future, return_diagnostics)


def _as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def variant_head(attn_out: Tensor, attn_input: Tensor, recurrent_out: Tensor, variant: str,
                 params: TKAT) -> Tensor:
    """Post-attention block.

    BASE passes ``attn_out`` through. A gates it and adds it back onto the
    attention input. B follows A with a GRN and a second gate whose residual
    is the recurrent output that fed the pre-attention GRN.
    """
    if variant == "BASE":
        return attn_out
    if variant not in ("A", "B"):
        raise ValueError(f"unknown variant {variant!r}")
    z = params.post_attention_norm(attn_input + params.post_attention_glu(attn_out))
    if variant == "A":
        return z
    z = params.post_grn(z)
    return params.final_norm(recurrent_out + params.final_glu(z))


def tkat_forward(model: TKAT, past, future, return_diagnostics: bool = False):
    """``past [batch, P, n_observed + n_known]``, ``future [batch, tau, n_known]`` -> ``[batch, tau]``."""
    cfg = model.config
    past, future = _as_input(past), _as_input(future)
    if past.ndim != 3 or past.shape[1:] != (cfg.past_len, cfg.n_past_features):
        raise ShapeError(f"past must be [batch, {cfg.past_len}, {cfg.n_past_features}], got {past.shape}")
    if future.ndim != 3 or future.shape[1:] != (cfg.horizon, cfg.n_known) or future.shape[0] != past.shape[0]:
        raise ShapeError(f"future must be [batch, {cfg.horizon}, {cfg.n_known}], got {future.shape}")

    past_sel, past_w = model.past_vsn(model.past_embedding(past))
    fut_sel, fut_w = model.future_vsn(model.future_embedding(future))
    enc_seq, enc_states = model.encoder(past_sel)
    dec_init = []
    dec_seq, dec_states = model.decoder(fut_sel, initial_states=enc_states,
                                        on_init=lambda i, st: dec_init.append(st))
    seq = concat([enc_seq, dec_seq], axis=1)
    attn_in = model.pre_attention_grn(seq)
    if cfg.positional_encoding:
        attn_in = attn_in + sinusoidal_encoding(seq.shape[1], cfg.d_model)
    if cfg.flatten_mode == "heads":
        heads, attn_w = head_outputs(attn_in, model.attention)
        flat = flatten_heads(heads)
    else:
        attn_out, attn_w = multi_head_forward(attn_in, model.attention)
        flat = flatten_fully_aware(variant_head(attn_out, attn_in, seq, cfg.variant, model))
    y = model.head(flat)
    if not return_diagnostics:
        return y
    return y, {
        "past_vsn_weights": past_w.data,
        "future_vsn_weights": fut_w.data,
        "attention_weights": attn_w.data,
        "encoder_final_states": enc_states,
        "decoder_initial_states": dec_init,
        "decoder_final_states": dec_states,
    }


def build_tkat(config: TkatConfig) -> TKAT:
    return TKAT(config)


def count_parameters(model: Module, depth: int = 1) -> tuple[int, dict[str, int]]:
    """Total trainable scalars and a per-submodule breakdown."""
    breakdown = model.parameter_breakdown(depth)
    return sum(breakdown.values()), breakdown
