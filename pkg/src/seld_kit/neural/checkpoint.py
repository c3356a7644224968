"""Checkpoint container.

Layout::

    b"SELDCKPT" | uint32 LE header length | UTF-8 JSON header | float32 LE blob

The blob holds the model parameters in ``ModelGraph.parameters()`` order,
followed by the optimizer's first-moment slots and then its second-moment
(or infinity-norm) slots when an optimizer sub-header is present.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from ..optim import OptimState
from .layers import ShapeError
from .model import ModelGraph

MAGIC = b"SELDCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: ModelGraph, meta: dict | None = None, optim: OptimState | None = None) -> None:
    params = [np.ascontiguousarray(p, dtype="<f4") for p in model.parameters()]
    header = {
        "format_version": CHECKPOINT_VERSION,
        "architecture": model.architecture,
        "input_shape": list(model.input_shape),
        "seed": model.seed,
        "param_shapes": [list(p.shape) for p in params],
        "n_params": model.count_parameters(),
        "meta": meta or {},
    }
    blobs = [p.tobytes() for p in params]
    if optim is not None and optim.m:
        header["optimizer"] = optim.hyper()
        blobs += [np.ascontiguousarray(a, dtype="<f4").tobytes() for a in optim.m + optim.v]
    head = json.dumps(header, sort_keys=True).encode()
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(head)) + head + b"".join(blobs))


def read_header(path) -> dict:
    data = Path(path).read_bytes()
    return _split(data, path)[0]


def _split(data: bytes, path) -> tuple[dict, bytes]:
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + n].decode())
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {header.get('format_version')} "
                              f"is not supported (expected {CHECKPOINT_VERSION})")
    return header, data[12 + n:]


def load_checkpoint(path) -> tuple[ModelGraph, dict, OptimState | None]:
    """Rebuild the model (validating its shape chain) and restore parameters and optimizer state."""
    header, blob = _split(Path(path).read_bytes(), path)
    try:
        model = ModelGraph.from_architecture(header["architecture"], tuple(header["input_shape"]),
                                             header.get("seed", 0))
    except ShapeError as err:
        raise CheckpointError(f"{path}: invalid architecture: {err}") from None
    shapes = [list(p.shape) for p in model.parameters()]
    if shapes != header["param_shapes"]:
        raise CheckpointError(f"{path}: parameter shapes {header['param_shapes']} do not match the "
                              f"architecture's {shapes}")
    flat = np.frombuffer(blob, dtype="<f4")
    n_model = sum(int(np.prod(s)) for s in shapes)
    has_optim = "optimizer" in header
    expected = n_model * (3 if has_optim else 1)
    if flat.size != expected:
        raise CheckpointError(f"{path}: blob holds {flat.size} floats, expected {expected}")

    def take(offset):
        arrays = []
        for s in shapes:
            k = int(np.prod(s))
            arrays.append(flat[offset:offset + k].reshape(s).astype(np.float32))
            offset += k
        return arrays, offset

    arrays, off = take(0)
    model.set_parameters(arrays)
    optim = None
    if has_optim:
        h = header["optimizer"]
        m, off = take(off)
        v, off = take(off)
        clip = h.get("clip_norm")
        optim = OptimState(kind=h["kind"], lr=h["lr"], beta1=h["beta1"], beta2=h["beta2"], eps=h["eps"],
                           clip_norm=math.inf if clip is None else clip, t=h["t"], m=m, v=v)
    return model, header, optim
