"""Hyper-VIB training, the fixed-beta VIB baseline, grid search and beta sweeps."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .checkpoint import load_checkpoint, save_checkpoint
from .data_io import Dataset
from .diffcore import RandomStream
from .hyperlayers import Architecture, ConvSpec, DenseSpec, FlattenSpec
from .objective import RateDistortion, hyper_vib_step_loss, vib_batch_loss
from .pipeline import Channel, Decoder, Encoder, SplitModel

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, detail: str):
        super().__init__(f"training diverged at step {step}: {detail}")
        self.step = step


# --------------------------------------------------------------------------
# configuration and model construction


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 64
    T: int = 1
    L: int = 1
    beta_min: float = 1e-5
    beta_max: float = 1.0
    beta_sampling: str = "uniform"
    lr: float = 1e-3
    adam_b1: float = 0.9
    adam_b2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    sigma2: float = 0.01
    noise: str = "sample"
    log_every: int = 0
    check_finite: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1 or self.T < 1 or self.L < 1:
            raise ValueError("batch_size, T and L must be >= 1")
        if not (0 < self.beta_min < self.beta_max):
            raise ValueError("beta range must satisfy 0 < beta_min < beta_max")
        if self.beta_sampling not in ("uniform", "log-uniform"):
            raise ValueError(f"unknown beta_sampling {self.beta_sampling!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.adam_b1 < 1 and 0 <= self.adam_b2 < 1 and self.adam_eps > 0):
            raise ValueError("invalid Adam constants")
        if not (math.isfinite(self.sigma2) and self.sigma2 >= 0):
            raise ValueError("sigma2 must be finite and >= 0")
        if self.noise not in ("sample", "expected"):
            raise ValueError(f"unknown noise mode {self.noise!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def beta_range(self) -> tuple[float, float]:
        return (self.beta_min, self.beta_max)

    @property
    def channel(self) -> Channel:
        return Channel(self.sigma2)


@dataclass(frozen=True)
class ModelSpec:
    """Encoder/decoder layout. ``linear_decoder`` fixes y_hat = B^T z_hat."""

    kind: str
    input_dim: int
    output_dim: int
    feature_dim: int = 64
    encoder_hidden: tuple[int, ...] = (256,)
    decoder_hidden: tuple[int, ...] = (128,)
    activation: str = "relu"
    encoder_mode: str = "stochastic"
    adjust_heads: bool = True
    bias: bool = True
    v_init: float = 0.0
    input_shape: tuple[int, ...] | None = None
    conv_channels: tuple[int, ...] = ()
    conv_kernel: int = 3
    linear_decoder: tuple[float, ...] | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelSpec":
        raw = dict(raw)
        for key in ("encoder_hidden", "decoder_hidden", "input_shape", "conv_channels", "linear_decoder"):
            if raw.get(key) is not None:
                raw[key] = tuple(raw[key])
        return cls(**raw)

    def encoder_body(self) -> Architecture | None:
        layers = []
        shape = None
        if self.conv_channels:
            if self.input_shape is None:
                raise ValueError("conv layers need input_shape")
            shape = tuple(self.input_shape)
            channels = shape[0]
            for c in self.conv_channels:
                layers.append(ConvSpec(channels, c, self.conv_kernel, self.activation))
                channels = c
            layers.append(FlattenSpec())
            arch = Architecture(layers, shape)
            width = _flat_width(arch)
        else:
            width = self.input_dim
        for h in self.encoder_hidden:
            layers.append(DenseSpec(width, h, self.activation, self.bias))
            width = h
        return Architecture(layers, shape) if layers else None

    def decoder_arch(self) -> Architecture:
        layers, width = [], self.feature_dim
        for h in self.decoder_hidden:
            layers.append(DenseSpec(width, h, self.activation, self.bias))
            width = h
        layers.append(DenseSpec(width, self.output_dim, "identity", self.bias))
        return Architecture(layers)

    def adjustable_layers(self, adjust_heads: bool | None = None) -> tuple:
        """Every beta-adjustable layer descriptor, for the extra-parameter count.

        The two encoder heads run side by side, so this is a plain sequence
        rather than a chained Architecture.
        """
        heads = self.adjust_heads if adjust_heads is None else adjust_heads
        body = self.encoder_body()
        layers = list(body.layers) if body else []
        width = body.output_width if body and any(isinstance(s, DenseSpec) for s in body.layers) else self.input_dim
        if heads:
            n_heads = 2 if self.encoder_mode == "stochastic" else 1
            layers += [DenseSpec(width, self.feature_dim, "identity", self.bias)] * n_heads
        if self.linear_decoder is None:
            layers += list(self.decoder_arch().layers)
        return tuple(layers)


def _flat_width(arch: Architecture) -> int:
    shape = arch.input_shape
    for spec in arch.layers:
        if isinstance(spec, ConvSpec):
            shape = (spec.out_channels, shape[1] + 2 * spec.padding - spec.kernel + 1,
                     shape[2] + 2 * spec.padding - spec.kernel + 1)
        elif isinstance(spec, FlattenSpec):
            shape = (int(np.prod(shape)),)
    return int(np.prod(shape))


def build_model(spec: ModelSpec, adjusted: bool, rng: RandomStream) -> SplitModel:
    enc_rng, dec_rng = rng.split(2)
    encoder = Encoder(spec.input_dim, spec.feature_dim, spec.encoder_body(), enc_rng, adjusted=adjusted,
                      adjust_heads=spec.adjust_heads, mode=spec.encoder_mode, head_bias=spec.bias,
                      v_init=spec.v_init)
    if spec.linear_decoder is not None:
        decoder = Decoder.linear(spec.linear_decoder)
    else:
        decoder = Decoder(spec.decoder_arch(), dec_rng, adjusted=adjusted, v_init=spec.v_init)
    return SplitModel(encoder, decoder, spec.kind)


def blobs_spec(dim: int, K: int, feature_dim: int = 8, hidden: int = 32) -> ModelSpec:
    return ModelSpec("classification", dim, K, feature_dim, (hidden,), (hidden,))


def mnist_spec(feature_dim: int = 64) -> ModelSpec:
    return ModelSpec("classification", 784, 10, feature_dim, (256,), (128,))


def linear_spec(n: int, d: int, B) -> ModelSpec:
    """Two bias-free linear device layers (n -> d -> d) and a fixed readout B."""
    return ModelSpec("regression", n, 1, d, (d,), (), "identity", "deterministic", bias=False,
                     linear_decoder=tuple(float(b) for b in np.asarray(B).reshape(-1)))


def save_model(path, model: SplitModel, spec: ModelSpec, adjusted: bool, extra: dict | None = None) -> None:
    meta = {"spec": asdict(spec), "adjusted": adjusted, "kind": model.kind}
    meta.update(extra or {})
    save_checkpoint(path, {k: t.data for k, t in model.all_parameters().items()}, meta)


def load_model(path) -> tuple[SplitModel, ModelSpec, dict]:
    tensors, meta = load_checkpoint(path)
    spec = ModelSpec.from_dict(meta["spec"])
    model = build_model(spec, bool(meta["adjusted"]), RandomStream(0))
    params = model.all_parameters()
    if set(params) != set(tensors):
        missing = sorted(set(params) ^ set(tensors))
        raise ValueError(f"{path}: checkpoint tensors do not match the model ({missing[:3]}...)")
    for name, t in params.items():
        if t.shape != tensors[name].shape:
            raise ValueError(f"{path}: tensor {name} has shape {tensors[name].shape}, model expects {t.shape}")
        t.data[...] = tensors[name]
    return model, spec, meta


# --------------------------------------------------------------------------
# optimizer and batching


class Adam:
    """Bias-corrected adaptive-moment updates over a fixed dict of leaf tensors.

    Parameter arrays are rebound as views into one flat buffer so a step is a
    handful of vector operations regardless of how many tensors there are.
    """

    def __init__(self, params: dict[str, dc.Tensor], lr: float = 1e-3, b1: float = 0.9,
                 b2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        tensors = list(params.values())
        self.flat = np.concatenate([t.data.reshape(-1) for t in tensors]) if tensors else np.zeros(0)
        self._slices = []
        offset = 0
        for t in tensors:
            n = t.data.size
            t.data = self.flat[offset:offset + n].reshape(t.data.shape)
            self._slices.append((t, offset, offset + n))
            offset += n
        self.m = np.zeros_like(self.flat)
        self.v = np.zeros_like(self.flat)
        self.steps = 0

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self) -> None:
        self.steps += 1
        c1 = 1.0 - self.b1 ** self.steps
        c2 = 1.0 - self.b2 ** self.steps
        g = np.zeros_like(self.flat)
        for t, lo, hi in self._slices:
            if t.grad is not None:
                g[lo:hi] = t.grad.reshape(-1)
        self.m *= self.b1
        self.m += (1.0 - self.b1) * g
        self.v *= self.b2
        self.v += (1.0 - self.b2) * g * g
        self.flat -= self.lr * (self.m / c1) / (np.sqrt(self.v / c2) + self.eps)


class BatchStream:
    """Reshuffled minibatches, one pass over the data per epoch."""

    def __init__(self, ds: Dataset, batch_size: int, rng: RandomStream):
        if len(ds) == 0:
            raise ValueError("dataset is empty")
        self.ds = ds
        self.batch_size = min(batch_size, len(ds))
        self.rng = rng
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    def __call__(self) -> tuple[np.ndarray, np.ndarray]:
        if self.batch_size == len(self.ds):
            return self.ds.inputs, self.ds.targets
        if self._pos + self.batch_size > len(self._order):
            self._order = self.rng.permutation(len(self.ds))
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return self.ds.inputs[idx], self.ds.targets[idx]


# --------------------------------------------------------------------------
# training loops


@dataclass
class StepRecord:
    step: int
    betas: list[float]
    distortion: float
    rate: float
    total: float


def format_step_record(rec: StepRecord) -> str:
    betas = ",".join(f"{b:.6g}" for b in rec.betas)
    return (f"step={rec.step} beta={betas} distortion={rec.distortion:.6g} "
            f"rate={rec.rate:.6g} total={rec.total:.6g}")


@dataclass
class TrainResult:
    model: SplitModel
    spec: ModelSpec
    adjusted: bool
    history: list[StepRecord]
    optimizer_steps: int
    wall_seconds: float
    beta: float | None = None

    @property
    def parameter_count(self) -> int:
        return self.model.parameter_count()


def _fit(model: SplitModel, config: TrainConfig, step_loss: Callable[[], tuple[dc.Tensor, list[RateDistortion]]]):
    opt = Adam(model.parameters(), config.lr, config.adam_b1, config.adam_b2, config.adam_eps)
    history: list[StepRecord] = []
    start = time.perf_counter()
    with dc.finite_checks(config.check_finite):
        for step in range(config.steps):
            opt.zero_grad()
            try:
                loss, parts = step_loss()
            except dc.NonFiniteError as exc:
                raise TrainingDiverged(step, str(exc)) from exc
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(step, f"loss is {value}")
            dc.backward(loss)
            opt.step()
            rec = StepRecord(step, [p.beta for p in parts],
                             float(np.mean([p.distortion for p in parts])),
                             float(np.mean([p.rate for p in parts])), value)
            history.append(rec)
            if config.log_every and step % config.log_every == 0:
                log.info(format_step_record(rec))
    return history, opt.steps, time.perf_counter() - start


def train_hyper(dataset: Dataset, config: TrainConfig, spec: ModelSpec,
                rng: RandomStream | None = None) -> TrainResult:
    """One training run over beta ~ U[beta_min, beta_max]."""
    rng = rng or RandomStream(config.seed)
    init_rng, batch_rng, noise_rng = rng.split(3)
    model = build_model(spec, adjusted=True, rng=init_rng)
    batches = BatchStream(dataset, config.batch_size, batch_rng)

    def step_loss():
        out = hyper_vib_step_loss(model, config.T, config.beta_range, batches, config.channel, noise_rng,
                                  L=config.L, sampling=config.beta_sampling, noise=config.noise)
        return out.loss, out.parts

    history, steps, seconds = _fit(model, config, step_loss)
    return TrainResult(model, spec, True, history, steps, seconds)


def train_vib(dataset: Dataset, beta: float, config: TrainConfig, spec: ModelSpec,
              rng: RandomStream | None = None) -> TrainResult:
    """Classical VIB at one fixed beta, without adjustment parameters."""
    if not beta >= 0:
        raise ValueError("beta must be >= 0")
    rng = rng or RandomStream(config.seed)
    init_rng, batch_rng, noise_rng = rng.split(3)
    model = build_model(spec, adjusted=False, rng=init_rng)
    batches = BatchStream(dataset, config.batch_size, batch_rng)
    channel = config.channel

    def step_loss():
        parts = []
        for _ in range(config.T):
            x, y = batches()
            parts.append(vib_batch_loss(model, x, y, beta, channel, noise_rng, L=config.L, noise=config.noise))
        loss = parts[0].loss
        for p in parts[1:]:
            loss = dc.add(loss, p.loss)
        if config.T > 1:
            loss = dc.div(loss, float(config.T))
        return loss, parts

    history, steps, seconds = _fit(model, config, step_loss)
    return TrainResult(model, spec, False, history, steps, seconds, beta=float(beta))


# --------------------------------------------------------------------------
# evaluation


@dataclass
class Metrics:
    beta: float
    accuracy: float = math.nan
    mse: float = math.nan
    distortion: float = math.nan
    rate: float = math.nan
    total: float = math.nan
    wall_seconds: float = math.nan
    param_count: int = 0


@dataclass
class SweepCurve:
    points: list[tuple[float, Metrics]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def betas(self) -> list[float]:
        return [b for b, _ in self.points]

    def column(self, name: str) -> list[float]:
        return [getattr(m, name) for _, m in self.points]


def evaluate(model: SplitModel, beta: float, dataset: Dataset, channel: Channel, rng: RandomStream,
             chunk: int = 2048, noise: str = "sample") -> Metrics:
    """Task metric plus mean distortion, rate and total at one beta.

    ``noise`` is passed to vib_batch_loss; with "expected" on the linear task
    the total is exactly the closed-form linear VIB loss.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    start = time.perf_counter()
    dist = rate = 0.0
    hits = 0
    sq = 0.0
    for lo in range(0, n, chunk):
        x = dataset.inputs[lo:lo + chunk]
        y = dataset.targets[lo:lo + chunk]
        rd = vib_batch_loss(model, x, y, beta, channel, rng, noise=noise)
        m = len(x)
        dist += rd.distortion * m
        rate += rd.rate * m
        out = rd.outputs.data
        if model.kind == "classification":
            hits += int(np.sum(np.argmax(out, axis=1) == y))
        else:
            target = y.reshape(out.shape)
            sq += float(np.sum((out - target) ** 2))
    dist /= n
    rate /= n
    metrics = Metrics(float(beta), distortion=dist, rate=rate, total=dist + beta * rate,
                      param_count=model.parameter_count())
    if model.kind == "classification":
        metrics.accuracy = hits / n
    else:
        metrics.mse = sq / n
    metrics.wall_seconds = time.perf_counter() - start
    return metrics


def default_beta_grid(lo_exp: float = -5.0, hi_exp: float = 0.0, step: float = 0.5) -> list[float]:
    """Log-spaced betas from 10**lo_exp to 10**hi_exp every ``step`` decades."""
    count = int(round((hi_exp - lo_exp) / step)) + 1
    return [float(10.0 ** (lo_exp + i * step)) for i in range(count)]


def sweep(model: SplitModel, beta_grid: Sequence[float], dataset: Dataset, channel: Channel,
          rng: RandomStream, noise: str = "sample") -> SweepCurve:
    """Evaluate the hypernetwork's generated parameters at each beta; no training."""
    streams = rng.split(max(1, len(beta_grid)))
    return SweepCurve([(float(b), evaluate(model, b, dataset, channel, s, noise=noise))
                       for b, s in zip(beta_grid, streams)])


def better(a: Metrics, b: Metrics, kind: str) -> bool:
    """True when a beats b; equal scores go to the smaller beta."""
    if kind == "classification":
        if a.accuracy != b.accuracy:
            return a.accuracy > b.accuracy
    elif a.mse != b.mse:
        return a.mse < b.mse
    return a.beta < b.beta


def select_best(curve: SweepCurve, kind: str) -> float:
    best = None
    for _, m in curve.points:
        if best is None or better(m, best, kind):
            best = m
    return best.beta


@dataclass
class GridResult:
    best_beta: float
    runs: dict[float, TrainResult]
    metrics: dict[float, Metrics]
    wall_seconds: float
    optimizer_steps: int

    @property
    def run_seconds(self) -> dict[float, float]:
        return {b: r.wall_seconds for b, r in self.runs.items()}


def _grid_job(args):
    dataset, beta, config, spec, eval_set, eval_rng = args
    run = train_vib(dataset, beta, config, spec)
    metrics = evaluate(run.model, beta, eval_set, config.channel, eval_rng, noise=config.noise)
    metrics.wall_seconds = run.wall_seconds
    return beta, run, metrics


def grid_search(dataset: Dataset, beta_grid: Sequence[float], config: TrainConfig, spec: ModelSpec,
                eval_dataset: Dataset | None = None, workers: int = 1) -> GridResult:
    """Train and evaluate one VIB model per grid beta; each run uses ``config.seed``."""
    grid = [float(b) for b in beta_grid]
    if not grid:
        raise ValueError("empty beta grid")
    eval_set = eval_dataset if eval_dataset is not None else dataset
    eval_streams = RandomStream(config.seed).split(len(grid) + 1)[1:]
    jobs = [(dataset, b, config, spec, eval_set, s) for b, s in zip(grid, eval_streams)]
    start = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_grid_job, jobs))
    else:
        results = [_grid_job(job) for job in jobs]
    wall = time.perf_counter() - start
    runs = {b: r for b, r, _ in results}
    metrics = {b: m for b, _, m in results}
    curve = SweepCurve([(b, metrics[b]) for b in grid])
    return GridResult(select_best(curve, spec.kind), runs, metrics, wall,
                      sum(r.optimizer_steps for r in runs.values()))


def encoder_linear_map(model: SplitModel, beta: float) -> np.ndarray:
    """Matrix A(beta) of an encoder made only of bias-free identity dense layers."""
    enc = model.encoder
    layers = (list(enc.body) if enc.body is not None else []) + [enc.mu_head]
    A = None
    for layer in layers:
        if getattr(layer, "activation", None) != "identity" or getattr(layer, "b", 0) is not None:
            raise ValueError("encoder is not linear")
        W, _ = layer.effective_params(beta)
        A = W if A is None else W @ A
    return A
