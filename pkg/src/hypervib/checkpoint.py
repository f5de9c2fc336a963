"""Versioned text checkpoints: a key -> tensor map with explicit shapes.

Layout (one item per line)::

    hypervib-checkpoint 1
    meta <json object>
    tensor <name> <ndim> <dim_1> ... <dim_k>
    <float.hex values separated by spaces, row-major>
    ...
    end

Values are written with ``float.hex`` so a load reproduces every bit.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = "hypervib-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    lines = [f"{MAGIC} {VERSION}", "meta " + json.dumps(dict(meta or {}), sort_keys=True)]
    for name, value in tensors.items():
        arr = np.asarray(getattr(value, "data", value), dtype=np.float64)
        if not name or any(c.isspace() for c in name):
            raise CheckpointError(f"tensor name {name!r} must be non-empty without whitespace")
        lines.append(" ".join(["tensor", name, str(arr.ndim), *map(str, arr.shape)]))
        lines.append(" ".join(float(v).hex() for v in arr.reshape(-1)))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    lines = Path(path).read_text().split("\n")
    head = lines[0].split() if lines else []
    if len(head) != 2 or head[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if head[1] != str(VERSION):
        raise CheckpointError(f"{path}: unsupported checkpoint version {head[1]}")
    if len(lines) < 2 or not lines[1].startswith("meta "):
        raise CheckpointError(f"{path}: missing meta line")
    meta = json.loads(lines[1][5:])
    tensors: dict[str, np.ndarray] = {}
    i = 2
    while i < len(lines) and lines[i] != "end":
        parts = lines[i].split()
        if len(parts) < 3 or parts[0] != "tensor":
            raise CheckpointError(f"{path}:{i + 1}: expected a tensor header")
        name, ndim = parts[1], int(parts[2])
        shape = tuple(int(s) for s in parts[3:])
        if len(shape) != ndim:
            raise CheckpointError(f"{path}:{i + 1}: shape header has {len(shape)} dims, declares {ndim}")
        if i + 1 >= len(lines):
            raise CheckpointError(f"{path}: truncated after header for {name}")
        values = [float.fromhex(v) for v in lines[i + 1].split()]
        if len(values) != int(np.prod(shape)):
            raise CheckpointError(f"{path}: tensor {name} has {len(values)} values for shape {shape}")
        tensors[name] = np.array(values, dtype=np.float64).reshape(shape)
        i += 2
    if i >= len(lines):
        raise CheckpointError(f"{path}: missing end marker")
    return tensors, meta
