"""Command-line entry point: training, sweeps, grid search, checks and reports.

Every subcommand takes the same run flags; ``--config FILE`` loads a JSON
object with the same field names (see ``FIELDS``) and explicit flags win.
Sweep and eval also fall back on the data settings stored in the
checkpoint. Everything is validated before any computation starts.

Exit codes: 0 success, 1 validation or usage error, 2 runtime or numerical
failure (including a failed check in verify-theorem / gradcheck).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import diffcore as dc
from .checkpoint import CheckpointError
from .data_io import (Dataset, IDXFormatError, ResultRecord, blobs_split, gen_linear_instance, load_mnist,
                      read_results, write_results)
from .diffcore import RandomStream
from .gradcheck import gradient_suite
from .linear_oracle import build_theorem_construction, verify_construction
from .pipeline import snr_to_noise_variance
from .training import (Metrics, TrainConfig, TrainingDiverged, blobs_spec, default_beta_grid, evaluate,
                       grid_search, linear_spec, load_model, mnist_spec, save_model, sweep, train_hyper,
                       train_vib)

log = logging.getLogger("hypervib")

COMMANDS = ("train-hyper", "train-vib", "grid", "sweep", "eval", "verify-theorem", "gradcheck", "report")
TASKS = ("blobs", "linear", "mnist")
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")

THEOREM_TOL = 1e-10
GRADCHECK_TOL = 1e-5

# per-task training defaults, used when a field is left unset
TASK_DEFAULTS = {
    "blobs": {"steps": 2000, "batch_size": 64, "lr": 3e-3, "noise": "sample"},
    "linear": {"steps": 6000, "batch_size": 0, "lr": 1e-2, "noise": "expected"},
    "mnist": {"steps": 2000, "batch_size": 64, "lr": 1e-3, "noise": "sample"},
}

# fields that describe the data and channel; stored in checkpoints
DATA_FIELDS = ("task", "seed", "sigma2", "snr_db", "classes", "dim", "per_class", "spread",
               "test_fraction", "n", "d", "samples", "noise_std", "mnist_dir", "mnist_limit",
               "feature_dim", "hidden", "noise")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Every setting a subcommand can read. JSON config keys use these names."""

    task: str = "blobs"
    seed: int = 0
    out: str | None = None
    checkpoint: str | None = None
    beta: float | None = None
    beta_min: float = 1e-5
    beta_max: float = 1.0
    grid: tuple[float, ...] | None = None
    sigma2: float = 0.01
    snr_db: float | None = None
    workers: int = 1
    steps: int | None = None
    batch_size: int | None = None
    lr: float | None = None
    noise: str | None = None
    T: int = 1
    L: int = 1
    beta_sampling: str = "uniform"
    log_every: int = 0
    omit_timing: bool = False
    classes: int = 4
    dim: int = 16
    per_class: int = 200
    spread: float = 1.0
    test_fraction: float = 0.25
    feature_dim: int | None = None
    hidden: int | None = None
    n: int = 3
    d: int = 4
    samples: int | None = None
    noise_std: float = 0.1
    mnist_dir: str | None = None
    mnist_limit: int | None = None
    points: int = 20

    def validate(self) -> None:
        if self.task not in TASKS:
            raise UsageError(f"task must be one of {', '.join(TASKS)}, got {self.task!r}")
        if not 0 <= self.seed < 2**64:
            raise UsageError("seed must be an unsigned 64-bit integer")
        if self.beta is not None and not (math.isfinite(self.beta) and self.beta >= 0):
            raise UsageError("beta must be finite and >= 0")
        if self.grid is not None:
            if not self.grid:
                raise UsageError("grid is empty")
            if not all(math.isfinite(b) and b > 0 for b in self.grid):
                raise UsageError("grid values must be finite and > 0")
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            raise UsageError("snr_db must be finite")
        if self.workers < 1 or self.points < 1:
            raise UsageError("workers and points must be >= 1")
        for name in ("classes", "dim", "per_class", "n", "d"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.classes < 2:
            raise UsageError("classes must be >= 2")
        if not self.spread > 0 or not self.noise_std >= 0:
            raise UsageError("spread must be > 0 and noise_std >= 0")
        if not 0 < self.test_fraction < 1:
            raise UsageError("test_fraction must be in (0, 1)")
        for name in ("feature_dim", "hidden", "samples", "mnist_limit"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.samples is not None and self.samples < 64 * self.n:
            raise UsageError(f"samples must be >= 64 n = {64 * self.n}")
        if self.task == "mnist":
            if self.mnist_dir is None:
                raise UsageError("task mnist needs --mnist-dir")
            for name in MNIST_FILES:
                if not (Path(self.mnist_dir) / name).is_file():
                    raise UsageError(f"missing MNIST file {Path(self.mnist_dir) / name}")
        try:
            self.train_config()
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    @property
    def channel_sigma2(self) -> float:
        return snr_to_noise_variance(self.snr_db) if self.snr_db is not None else self.sigma2

    def task_default(self, name: str):
        value = getattr(self, name)
        return TASK_DEFAULTS[self.task][name] if value is None else value

    def train_config(self, dataset_size: int | None = None) -> TrainConfig:
        batch = self.task_default("batch_size")
        if batch == 0:
            # full batch
            batch = dataset_size or 1
        return TrainConfig(steps=self.task_default("steps"), batch_size=batch, T=self.T, L=self.L,
                           beta_min=self.beta_min, beta_max=self.beta_max, beta_sampling=self.beta_sampling,
                           lr=self.task_default("lr"), seed=self.seed, sigma2=self.channel_sigma2,
                           noise=self.task_default("noise"), log_every=self.log_every)

    def beta_grid(self) -> list[float]:
        if self.grid is not None:
            return list(self.grid)
        if self.task == "linear":
            return default_beta_grid(-2.0, 0.0, 0.5)
        return default_beta_grid()

    def data_fields(self) -> dict:
        return {name: getattr(self, name) for name in DATA_FIELDS}


FIELDS = {f.name: f for f in fields(RunConfig)}
_FLOAT_FIELDS = {"beta", "beta_min", "beta_max", "sigma2", "snr_db", "lr", "spread", "test_fraction",
                 "noise_std"}
_INT_FIELDS = {"seed", "workers", "steps", "batch_size", "T", "L", "log_every", "classes", "dim",
               "per_class", "feature_dim", "hidden", "n", "d", "samples", "mnist_limit", "points"}
_STR_FIELDS = {"task", "out", "checkpoint", "noise", "beta_sampling", "mnist_dir"}


def _coerce(name: str, value: Any):
    """Type-check one config value; JSON and flag strings share this path."""
    if value is None:
        return None
    if name == "grid":
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise UsageError("grid must be a list of numbers or a comma-separated string")
        return tuple(_coerce("beta", v) for v in value)
    if name == "omit_timing":
        if isinstance(value, bool):
            return value
        raise UsageError("omit_timing must be true or false")
    if isinstance(value, bool):
        raise UsageError(f"{name} must not be a boolean")
    try:
        if name in _FLOAT_FIELDS:
            return float(value)
        if name in _INT_FIELDS:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
    except (TypeError, ValueError):
        raise UsageError(f"{name}: invalid value {value!r}") from None
    if name in _STR_FIELDS:
        if not isinstance(value, str):
            raise UsageError(f"{name} must be a string")
        return value
    raise UsageError(f"unknown config key {name!r}")


def load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    unknown = sorted(set(raw) - set(FIELDS))
    if unknown:
        raise UsageError(f"config {path}: unknown keys {', '.join(unknown)}")
    return {k: _coerce(k, v) for k, v in raw.items()}


def build_run_config(*layers: dict) -> RunConfig:
    merged: dict = {}
    for layer in layers:
        merged.update(layer)
    cfg = RunConfig(**merged)
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 (argparse uses 2) and keep stdout clean
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    run = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    run.add_argument("--config", help="JSON file with RunConfig fields")
    for name in FIELDS:
        if name == "omit_timing":
            run.add_argument("--omit-timing", action="store_true",
                             help="write wall_seconds as nan so result files are reproducible byte for byte")
        else:
            run.add_argument(_flag(name), dest=name, metavar=name.upper())

    parser = _Parser(prog="hypervib", description="Hyper-VIB training and evaluation")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {
        "train-hyper": "train one beta-conditioned model over [beta-min, beta-max]",
        "train-vib": "train a fixed-beta VIB model (needs --beta)",
        "grid": "train one VIB model per grid beta and pick the best",
        "sweep": "evaluate a checkpoint at every grid beta",
        "eval": "evaluate a checkpoint at one beta",
        "verify-theorem": "check the exact linear construction on a random instance",
        "gradcheck": "finite-difference check of every differentiable block",
        "report": "summarize result CSV files",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[run], help=helps[name], argument_default=argparse.SUPPRESS)
        if name == "report":
            p.add_argument("inputs", nargs="+", metavar="RESULTS_CSV")
    return parser


# --------------------------------------------------------------------------
# data and models


@dataclass
class TaskData:
    train: Dataset
    test: Dataset
    spec: object
    instance: object = None


def load_task(cfg: RunConfig) -> TaskData:
    if cfg.task == "blobs":
        tr, te = blobs_split(cfg.classes, cfg.dim, cfg.per_class, cfg.spread, cfg.seed, cfg.test_fraction)
        return TaskData(tr, te, blobs_spec(cfg.dim, cfg.classes, cfg.feature_dim or 8, cfg.hidden or 32))
    if cfg.task == "linear":
        inst, ds = gen_linear_instance(cfg.n, cfg.d, cfg.samples or 64 * cfg.n, cfg.noise_std, cfg.seed,
                                       cfg.channel_sigma2)
        # the linear task is an optimization check: evaluate on the training set
        return TaskData(ds, ds, linear_spec(cfg.n, cfg.d, inst.B), inst)
    root = Path(cfg.mnist_dir)
    train = load_mnist(root / MNIST_FILES[0], root / MNIST_FILES[1], "train")
    test = load_mnist(root / MNIST_FILES[2], root / MNIST_FILES[3], "test")
    if cfg.mnist_limit:
        train = train.subset(np.arange(min(cfg.mnist_limit, len(train))))
        test = test.subset(np.arange(min(cfg.mnist_limit, len(test))))
    return TaskData(train, test, mnist_spec(cfg.feature_dim or 64))


def _record(run_id: str, method: str, cfg: RunConfig, m: Metrics, wall: float) -> ResultRecord:
    return ResultRecord(run_id, method, cfg.task, m.beta, m.accuracy, m.mse, m.distortion, m.rate, m.total,
                        math.nan if cfg.omit_timing else wall, m.param_count, cfg.seed)


def _write_history(path: Path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("step", "beta", "distortion", "rate", "total"))
        for rec in history:
            writer.writerow((rec.step, " ".join(f"{b:.9g}" for b in rec.betas),
                             f"{rec.distortion:.9g}", f"{rec.rate:.9g}", f"{rec.total:.9g}"))


def _eval_stream(cfg: RunConfig) -> RandomStream:
    # evaluation noise is independent of the (seed-derived) training streams
    return RandomStream(cfg.seed).split(2)[1]


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# subcommands


def cmd_train_hyper(cfg: RunConfig, data: TaskData) -> int:
    out = _out_dir(cfg)
    tc = cfg.train_config(len(data.train))
    log.info("train-hyper task=%s steps=%d beta in [%g, %g]", cfg.task, tc.steps, tc.beta_min, tc.beta_max)
    result = train_hyper(data.train, tc, data.spec)
    save_model(out / "model.ckpt", result.model, data.spec, True,
               {"method": "hyper", "run": cfg.data_fields()})
    _write_history(out / "history.csv", result.history)
    curve = sweep(result.model, cfg.beta_grid(), data.test, tc.channel, _eval_stream(cfg), noise=tc.noise)
    run_id = f"hyper-s{cfg.seed}"
    write_results([_record(run_id, "hyper", cfg, m, result.wall_seconds) for _, m in curve.points],
                  out / "results.csv")
    log.info("train-hyper done in %.2fs", result.wall_seconds)
    return 0


def cmd_train_vib(cfg: RunConfig, data: TaskData) -> int:
    out = _out_dir(cfg)
    tc = cfg.train_config(len(data.train))
    log.info("train-vib task=%s steps=%d beta=%g", cfg.task, tc.steps, cfg.beta)
    result = train_vib(data.train, cfg.beta, tc, data.spec)
    save_model(out / "model.ckpt", result.model, data.spec, False,
               {"method": "vib", "beta": cfg.beta, "run": cfg.data_fields()})
    _write_history(out / "history.csv", result.history)
    m = evaluate(result.model, cfg.beta, data.test, tc.channel, _eval_stream(cfg), noise=tc.noise)
    write_results([_record(f"vib-b{cfg.beta:.6g}-s{cfg.seed}", "vib", cfg, m, result.wall_seconds)],
                  out / "results.csv")
    return 0


def cmd_grid(cfg: RunConfig, data: TaskData) -> int:
    out = _out_dir(cfg)
    tc = cfg.train_config(len(data.train))
    grid = cfg.beta_grid()
    log.info("grid task=%s points=%d workers=%d", cfg.task, len(grid), cfg.workers)
    result = grid_search(data.train, grid, tc, data.spec, data.test, workers=cfg.workers)
    records = [_record(f"vib-b{b:.6g}-s{cfg.seed}", "vib", cfg, result.metrics[b], result.runs[b].wall_seconds)
               for b in grid]
    write_results(records, out / "results.csv")
    print(json.dumps({"best_beta": result.best_beta, "optimizer_steps": result.optimizer_steps}))
    return 0


def cmd_sweep(cfg: RunConfig, data: TaskData, model, meta) -> int:
    out = _out_dir(cfg)
    method = meta.get("method", "hyper")
    curve = sweep(model, cfg.beta_grid(), data.test, cfg.train_config(len(data.train)).channel,
                  _eval_stream(cfg), noise=cfg.task_default("noise"))
    run_id = f"{method}-s{cfg.seed}"
    write_results([_record(run_id, method, cfg, m, m.wall_seconds) for _, m in curve.points],
                  out / "sweep.csv")
    return 0


def cmd_eval(cfg: RunConfig, data: TaskData, model, meta) -> int:
    out = _out_dir(cfg)
    method = meta.get("method", "hyper")
    m = evaluate(model, cfg.beta, data.test, cfg.train_config(len(data.train)).channel, _eval_stream(cfg),
                 noise=cfg.task_default("noise"))
    rec = _record(f"{method}-s{cfg.seed}", method, cfg, m, m.wall_seconds)
    write_results([rec], out / "eval.csv")
    shown = {k: v for k, v in vars(m).items() if not (cfg.omit_timing and k == "wall_seconds")}
    print(json.dumps(shown, sort_keys=True, allow_nan=True))
    return 0


def cmd_verify_theorem(cfg: RunConfig) -> int:
    inst, _ = gen_linear_instance(cfg.n, cfg.d, cfg.samples or 64 * cfg.n, cfg.noise_std, cfg.seed,
                                  cfg.channel_sigma2)
    grid = list(cfg.grid) if cfg.grid is not None else [float(b) for b in np.logspace(-5, 1, 13)]
    deviation = verify_construction(build_theorem_construction(inst), inst, grid)
    print(f"max_relative_deviation={deviation:.6e}")
    if deviation >= THEOREM_TOL:
        log.error("deviation %.3e exceeds %.0e", deviation, THEOREM_TOL)
        return 2
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    worst = gradient_suite(cfg.seed, cfg.points)
    for name, err in worst.items():
        print(f"{name}={err:.6e}")
    total = max(worst.values())
    print(f"max_relative_error={total:.6e}")
    if total >= GRADCHECK_TOL:
        log.error("relative error %.3e exceeds %.0e", total, GRADCHECK_TOL)
        return 2
    return 0


# --------------------------------------------------------------------------
# report


METRIC_COLUMNS = ("accuracy", "mse", "distortion", "rate", "total")


def _g(value: float) -> str:
    return f"{value:.9g}"


def build_report(records: Sequence[ResultRecord]) -> tuple[str, str, str]:
    """(totals CSV, per-beta CSV, text). A pure function of the records.

    Wall time and parameter counts are summed over distinct run_ids, since
    every row of one run repeats that run's training time.
    """
    methods = sorted({r.method for r in records})
    runs: dict[str, dict[str, ResultRecord]] = {m: {} for m in methods}
    for r in records:
        runs[r.method].setdefault(r.run_id, r)
    totals = {}
    for m in methods:
        rs = list(runs[m].values())
        totals[m] = {
            "runs": len(rs),
            "wall_seconds": float(sum(r.wall_seconds for r in rs)),
            "param_count_per_run": max(r.param_count for r in rs),
            "param_count_total": sum(r.param_count for r in rs),
        }
    reduction = None
    if "hyper" in totals and "vib" in totals and totals["vib"]["wall_seconds"] > 0:
        reduction = 100.0 * (1.0 - totals["hyper"]["wall_seconds"] / totals["vib"]["wall_seconds"])

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("method", "runs", "wall_seconds", "param_count_per_run", "param_count_total"))
    for m in methods:
        t = totals[m]
        w.writerow((m, t["runs"], _g(t["wall_seconds"]), t["param_count_per_run"], t["param_count_total"]))
    totals_csv = buf.getvalue()

    table: dict[str, dict[str, ResultRecord]] = {}
    for r in records:
        table.setdefault(_g(r.beta), {}).setdefault(r.method, r)
    betas = sorted(table, key=float)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["beta"] + [f"{m}_{c}" for m in methods for c in METRIC_COLUMNS])
    for b in betas:
        row = [b]
        for m in methods:
            rec = table[b].get(m)
            row += [_g(getattr(rec, c)) if rec else "" for c in METRIC_COLUMNS]
        w.writerow(row)
    betas_csv = buf.getvalue()

    lines = ["per-method totals"]
    for m in methods:
        t = totals[m]
        wall = "n/a" if math.isnan(t["wall_seconds"]) else f"{t['wall_seconds']:.3f}s"
        lines.append(f"  {m:<8} runs={t['runs']:<3} wall={wall} "
                     f"params/run={t['param_count_per_run']} params total={t['param_count_total']}")
    if reduction is not None:
        lines.append(f"time reduction (1 - hyper/vib): {reduction:.1f}%")
    lines.append("")
    lines.append("per-beta metrics")
    header = f"  {'beta':>10}" + "".join(f" {m + ' acc':>10} {m + ' mse':>10} {m + ' total':>11}" for m in methods)
    lines.append(header)
    for b in betas:
        row = f"  {float(b):>10.3g}"
        for m in methods:
            rec = table[b].get(m)
            if rec is None:
                row += f" {'-':>10} {'-':>10} {'-':>11}"
            else:
                row += f" {rec.accuracy:>10.4f} {rec.mse:>10.4g} {rec.total:>11.5g}"
        lines.append(row)
    return totals_csv, betas_csv, "\n".join(lines) + "\n"


def cmd_report(cfg: RunConfig, inputs: Sequence[str]) -> int:
    records = []
    for path in inputs:
        records += read_results(path)
    if not records:
        raise UsageError("no result rows in the inputs")
    totals_csv, betas_csv, text = build_report(records)
    if cfg.out is not None:
        out = _out_dir(cfg)
        (out / "report_totals.csv").write_text(totals_csv)
        (out / "report_betas.csv").write_text(betas_csv)
        (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------
# dispatch


NEEDS_OUT = {"train-hyper", "train-vib", "grid", "sweep", "eval"}


def _prepare(args: argparse.Namespace):
    """Everything that can fail on bad input, before any computation."""
    flags = {k: _coerce(k, v) for k, v in vars(args).items() if k in FIELDS}
    if "omit_timing" in vars(args):
        flags["omit_timing"] = True
    file_layer = load_config_file(args.config) if getattr(args, "config", None) else {}
    ckpt_layer, model, meta = {}, None, {}
    command = args.command
    if command in ("sweep", "eval"):
        ckpt = flags.get("checkpoint", file_layer.get("checkpoint"))
        if ckpt is None:
            raise UsageError(f"{command} needs --checkpoint")
        if not Path(ckpt).is_file():
            raise UsageError(f"checkpoint {ckpt} does not exist")
        try:
            model, _, meta = load_model(ckpt)
        except (CheckpointError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"cannot load checkpoint {ckpt}: {exc}") from None
        ckpt_layer = {k: v for k, v in meta.get("run", {}).items() if k in DATA_FIELDS}
        if command == "eval" and "beta" in meta:
            ckpt_layer["beta"] = meta["beta"]
        ckpt_layer = {k: _coerce(k, v) for k, v in ckpt_layer.items()}
    cfg = build_run_config(ckpt_layer, file_layer, flags)
    if command in NEEDS_OUT and cfg.out is None:
        raise UsageError(f"{command} needs --out")
    if command in ("train-vib", "eval") and cfg.beta is None:
        raise UsageError(f"{command} needs --beta")
    if command == "report":
        for path in args.inputs:
            if not Path(path).is_file():
                raise UsageError(f"results file {path} does not exist")
    return cfg, model, meta


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("missing subcommand")
        cfg, model, meta = _prepare(args)
        data = load_task(cfg) if args.command in NEEDS_OUT else None
    except UsageError as exc:
        print(f"hypervib: error: {exc}", file=sys.stderr)
        return 1
    except (IDXFormatError, ValueError) as exc:
        print(f"hypervib: error: {exc}", file=sys.stderr)
        return 1
    if data is not None and model is not None and model.encoder.input_dim != data.train.input_dim:
        print("hypervib: error: checkpoint input width does not match the dataset", file=sys.stderr)
        return 1
    try:
        command = args.command
        if command == "train-hyper":
            return cmd_train_hyper(cfg, data)
        if command == "train-vib":
            return cmd_train_vib(cfg, data)
        if command == "grid":
            return cmd_grid(cfg, data)
        if command == "sweep":
            return cmd_sweep(cfg, data, model, meta)
        if command == "eval":
            return cmd_eval(cfg, data, model, meta)
        if command == "verify-theorem":
            return cmd_verify_theorem(cfg)
        if command == "gradcheck":
            return cmd_gradcheck(cfg)
        try:
            return cmd_report(cfg, args.inputs)
        except (UsageError, ValueError) as exc:
            print(f"hypervib: error: {exc}", file=sys.stderr)
            return 1
    except (TrainingDiverged, dc.NonFiniteError, np.linalg.LinAlgError, RuntimeError, ArithmeticError) as exc:
        print(f"hypervib: failure: {exc}", file=sys.stderr)
        return 2


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
