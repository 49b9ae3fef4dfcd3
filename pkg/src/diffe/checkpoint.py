"""Self-describing model checkpoints.

One JSON header line (architecture, arm, parameter names and shapes), then
every parameter as little-endian float64 in header order.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dataset import read_header
from .errors import FormatError
from .networks import DiffEModel, ModelConfig

CHECKPOINT_VERSION = 1
_F64 = np.dtype("<f8")


def save_checkpoint(model: DiffEModel, path, extra: dict | None = None) -> None:
    params = list(model.named_parameters())
    header = {
        "format": "diffe-checkpoint",
        "format_version": CHECKPOINT_VERSION,
        "model": asdict(model.config),
        "T": model.T,
        "ablation": model.ablation,
        "input_scale": model.input_scale,
        "params": [{"name": n, "shape": list(p.shape)} for n, p in params],
        "extra": extra or {},
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, p in params:
            fh.write(np.ascontiguousarray(p.data, dtype=_F64).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[DiffEModel, dict]:
    """Return the restored model and the header's ``extra`` dict."""
    raw = Path(path).read_bytes()
    header, offset = read_header(raw)
    if header.get("format") != "diffe-checkpoint":
        raise FormatError("not a diffe checkpoint")
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {header.get('format_version')!r}")
    try:
        cfg = ModelConfig(**header["model"])
        model = DiffEModel(cfg, int(header["T"]), header["ablation"],
                           input_scale=float(header["input_scale"]))
        entries = [(e["name"], tuple(e["shape"])) for e in header["params"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed checkpoint header: {exc}") from None
    params = dict(model.named_parameters())
    if [n for n, _ in entries] != list(params):
        raise FormatError("checkpoint parameter names do not match the architecture")
    expected = 8 * sum(int(np.prod(s)) for _, s in entries)
    actual = len(raw) - offset
    if actual != expected:
        raise FormatError(f"payload is {actual} bytes, expected {expected}")
    pos = offset
    for name, shape in entries:
        if tuple(params[name].shape) != shape:
            raise FormatError(f"parameter {name}: shape {shape} != {params[name].shape}")
        count = int(np.prod(shape))
        values = np.frombuffer(raw, dtype=_F64, count=count, offset=pos).reshape(shape)
        if not np.isfinite(values).all():
            raise FormatError(f"parameter {name} holds non-finite values")
        params[name].data[...] = values
        pos += 8 * count
    return model, header.get("extra", {})
