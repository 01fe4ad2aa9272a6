"""Save and restore models as an ``.npz`` of named arrays plus a JSON manifest."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nn import Module
from .zoo import ModelSize, build_model

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: Module, path, name: str, build_args: dict) -> tuple[Path, Path]:
    """Write ``<path>.npz`` (parameters keyed by canonical path) and ``<path>.json``.

    ``build_args`` holds the keyword arguments of :func:`tkat.zoo.build_model`
    except ``name``; ``size`` may be a :class:`ModelSize` or a dict.
    """
    base = Path(path)
    args = dict(build_args)
    if isinstance(args.get("size"), ModelSize):
        args["size"] = args["size"].to_dict()
    manifest = {"format": FORMAT_VERSION, "model": name, "model_class": type(model).__name__,
                "build_args": args, "n_params": model.num_parameters()}
    npz, js = base.with_suffix(".npz"), base.with_suffix(".json")
    np.savez(npz, **model.state_dict())
    js.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return npz, js


def load_checkpoint(path) -> tuple[Module, dict]:
    base = Path(path)
    npz, js = base.with_suffix(".npz"), base.with_suffix(".json")
    if not npz.exists() or not js.exists():
        raise CheckpointError(f"checkpoint files {npz} / {js} not found")
    manifest = json.loads(js.read_text())
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    args = dict(manifest["build_args"])
    if args.get("size") is not None:
        args["size"] = ModelSize(**args["size"])
    model = build_model(manifest["model"], **args)
    if type(model).__name__ != manifest["model_class"]:
        raise CheckpointError(f"manifest class {manifest['model_class']} does not match {type(model).__name__}")
    with np.load(npz) as arrays:
        model.load_state_dict({k: arrays[k] for k in arrays.files})
    return model, manifest
