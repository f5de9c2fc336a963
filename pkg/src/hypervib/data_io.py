"""Synthetic datasets, IDX (MNIST) ingestion and CSV result files."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from .diffcore import RandomStream
from .linear_oracle import LinearInstance

IDX_UBYTE = 0x08
IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

RESULT_COLUMNS = (
    "run_id", "method", "task", "beta", "accuracy", "mse", "distortion", "rate",
    "total", "wall_seconds", "param_count", "seed",
)


@dataclass
class Dataset:
    inputs: np.ndarray  # (N, n) or (N, C, H, W)
    targets: np.ndarray  # int labels (N,) or float values (N,) / (N, k)
    kind: str  # "classification" | "regression"
    split: str = "train"
    num_classes: int | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.kind == "classification":
            self.targets = np.asarray(self.targets, dtype=np.int64)
            if self.num_classes is None:
                self.num_classes = int(self.targets.max()) + 1 if self.targets.size else 0
            if self.targets.size and (self.targets.min() < 0 or self.targets.max() >= self.num_classes):
                raise ValueError("labels out of range")
        elif self.kind == "regression":
            self.targets = np.asarray(self.targets, dtype=np.float64)
        else:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets differ in length")
        if np.isnan(self.inputs).any() or (self.kind == "regression" and np.isnan(self.targets).any()):
            raise ValueError("dataset contains NaN")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.inputs.shape[1:]))

    @property
    def output_dim(self) -> int:
        if self.kind == "classification":
            return int(self.num_classes)
        return 1 if self.targets.ndim == 1 else self.targets.shape[1]

    def subset(self, index: np.ndarray, split: str | None = None) -> "Dataset":
        return Dataset(self.inputs[index], self.targets[index], self.kind,
                       split or self.split, self.num_classes)


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    order = RandomStream(seed).permutation(len(ds))
    n_test = max(1, int(round(len(ds) * test_fraction)))
    return ds.subset(np.sort(order[n_test:]), "train"), ds.subset(np.sort(order[:n_test]), "test")


def gen_linear_instance(n: int, d: int, N: int, noise_std: float, seed: int,
                        sigma2: float = 0.01) -> tuple[LinearInstance, Dataset]:
    """Gaussian inputs, y = w^T x + noise for a hidden w, and a unit-norm decoder B."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    if N < 64 * n:
        raise ValueError(f"need N >= 64 n samples, got N={N} for n={n}")
    rng = RandomStream(seed)
    w = rng.normal(n)
    B = rng.normal(d)
    while not np.any(B):
        B = rng.normal(d)
    B = B / np.linalg.norm(B)
    for _ in range(10):
        X = rng.normal((n, N))
        if np.linalg.svd(X, compute_uv=False).min() > 1e-8:
            break
    else:
        raise RuntimeError("could not draw a full-rank input matrix in 10 attempts")
    y = w @ X + noise_std * rng.normal(N)
    inst = LinearInstance(X, y[None, :], B, sigma2)
    return inst, Dataset(X.T.copy(), y, "regression")


def gen_blobs(K: int, dim: int, per_class: int, spread: float, seed: int,
              split: str = "train") -> Dataset:
    """K isotropic Gaussian clusters with centers at least 4 * spread apart."""
    if K < 2 or per_class < 1 or not spread > 0 or dim < 1:
        raise ValueError("gen_blobs needs K >= 2, per_class >= 1, dim >= 1, spread > 0")
    rng = RandomStream(seed)
    min_dist = 4.0 * spread
    centers = None
    for _ in range(100):
        cand = rng.normal((K, dim), scale=2.0 * spread * max(1.0, math.sqrt(K / dim)))
        gaps = np.linalg.norm(cand[:, None, :] - cand[None, :, :], axis=-1)
        if gaps[np.triu_indices(K, 1)].min() >= min_dist:
            centers = cand
            break
    if centers is None:
        raise RuntimeError("could not place cluster centers after 100 attempts")
    labels = np.repeat(np.arange(K), per_class)
    points = centers[labels] + spread * rng.normal((K * per_class, dim))
    order = rng.permutation(K * per_class)
    return Dataset(points[order], labels[order], "classification", split, K)


def blobs_split(K: int, dim: int, per_class: int, spread: float, seed: int,
                test_fraction: float = 0.25) -> tuple[Dataset, Dataset]:
    return train_test_split(gen_blobs(K, dim, per_class, spread, seed), test_fraction, seed + 1)


# --------------------------------------------------------------------------
# IDX


class IDXFormatError(ValueError):
    pass


def load_idx(path) -> np.ndarray:
    """Parse an unsigned-byte IDX file.

    1-d files return int64 labels; files with more dimensions return float64
    images flattened to (count, rest) and scaled to [0, 1].
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IDXFormatError(f"{path}: too short for an IDX header")
    zero, dtype, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0:
        raise IDXFormatError(f"{path}: bad magic 0x{struct.unpack('>I', raw[:4])[0]:08x}")
    if dtype != IDX_UBYTE:
        raise IDXFormatError(f"{path}: unsupported element type 0x{dtype:02x} (only unsigned byte)")
    if ndim < 1:
        raise IDXFormatError(f"{path}: IDX file declares no dimensions")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXFormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise IDXFormatError(f"{path}: truncated payload ({len(raw) - header} of {count} bytes)")
    if len(raw) - header > count:
        raise IDXFormatError(f"{path}: {len(raw) - header - count} trailing bytes after payload")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header)
    if ndim == 1:
        return data.astype(np.int64)
    return data.reshape(dims[0], -1).astype(np.float64) / 255.0


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("write_idx writes unsigned-byte arrays only")
    header = struct.pack(">HBB", 0, IDX_UBYTE, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes(order="C"))


def load_mnist(images_path, labels_path, split: str = "train") -> Dataset:
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 2 or labels.ndim != 1:
        raise IDXFormatError("expected an image file and a label file")
    return Dataset(images, labels, "classification", split, 10)


# --------------------------------------------------------------------------
# results


@dataclass
class ResultRecord:
    run_id: str
    method: str
    task: str
    beta: float
    accuracy: float = math.nan
    mse: float = math.nan
    distortion: float = math.nan
    rate: float = math.nan
    total: float = math.nan
    wall_seconds: float = math.nan
    param_count: int = 0
    seed: int = 0


_FLOAT_FIELDS = {"beta", "accuracy", "mse", "distortion", "rate", "total", "wall_seconds"}
_INT_FIELDS = {"param_count", "seed"}


def _fmt(name: str, value) -> str:
    if name in _FLOAT_FIELDS:
        return f"{float(value):.9g}"
    return str(value)


def write_results(records: Iterable[ResultRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for rec in records:
            row = asdict(rec)
            writer.writerow([_fmt(name, row[name]) for name in RESULT_COLUMNS])


def read_results(path) -> list[ResultRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file, expected header")
        if tuple(header) != RESULT_COLUMNS:
            for i, expected in enumerate(RESULT_COLUMNS):
                got = header[i] if i < len(header) else "<missing>"
                if got != expected:
                    raise ValueError(f"{path}: column {i + 1} is {got!r}, expected {expected!r}")
            raise ValueError(f"{path}: unexpected extra column {header[len(RESULT_COLUMNS)]!r}")
        records = []
        for line, row in enumerate(reader, start=2):
            if len(row) != len(RESULT_COLUMNS):
                raise ValueError(f"{path}:{line}: expected {len(RESULT_COLUMNS)} fields, got {len(row)}")
            values = {}
            for f in fields(ResultRecord):
                raw = row[RESULT_COLUMNS.index(f.name)]
                try:
                    if f.name in _FLOAT_FIELDS:
                        values[f.name] = float(raw)
                    elif f.name in _INT_FIELDS:
                        values[f.name] = int(raw)
                    else:
                        values[f.name] = raw
                except ValueError:
                    raise ValueError(f"{path}:{line}: bad value {raw!r} in column {f.name!r}") from None
            records.append(ResultRecord(**values))
    return records
