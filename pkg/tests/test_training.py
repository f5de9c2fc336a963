import math

import numpy as np
import pytest

from hypervib.data_io import Dataset, blobs_split, gen_linear_instance
from hypervib.diffcore import RandomStream, Tensor
from hypervib.hyperlayers import Architecture, DenseSpec, extra_parameter_count
from hypervib.linear_oracle import closed_form_A, cvib_linear
from hypervib.pipeline import Channel, Decoder, Encoder, SplitModel
from hypervib.training import (Adam, BatchStream, Metrics, SweepCurve, TrainConfig, TrainingDiverged,
                               blobs_spec, default_beta_grid, encoder_linear_map, evaluate, grid_search,
                               linear_spec, load_model, save_model, select_best, sweep, train_hyper, train_vib)


@pytest.fixture(scope="module")
def blobs():
    return blobs_split(3, 4, 40, 1.0, seed=0)


@pytest.fixture(scope="module")
def linear():
    inst, ds = gen_linear_instance(3, 4, 192, 0.1, seed=0)
    cfg = TrainConfig(steps=6000, batch_size=len(ds), lr=1e-2, noise="expected", beta_min=1e-2,
                      sigma2=inst.sigma2)
    return inst, ds, cfg, linear_spec(3, 4, inst.B)


def small_config(**kw):
    base = dict(steps=40, batch_size=16, lr=3e-3)
    base.update(kw)
    return TrainConfig(**base)


def params_of(model):
    return {k: t.data.copy() for k, t in model.all_parameters().items()}


# ---------------------------------------------------------------- optimizer and batching

def test_adam_matches_hand_updates():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    m = v = np.zeros(2)
    ref = p.data.copy()
    for t in range(1, 6):
        g = 2 * ref  # gradient of ||p||^2
        p.grad = 2 * p.data.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p.data, ref, rtol=1e-14)
    assert opt.steps == 5


def test_batches_cover_each_epoch_once(blobs):
    train, _ = blobs
    stream = BatchStream(train, 10, RandomStream(0))
    seen = []
    for _ in range(len(train) // 10):
        x, _ = stream()
        seen.extend(map(tuple, x))
    assert len(set(seen)) == len(train) // 10 * 10


def test_config_validation():
    for kw in ({"steps": 0}, {"T": 0}, {"beta_min": 0.0}, {"beta_min": 2.0}, {"lr": 0.0},
               {"noise": "none"}, {"beta_sampling": "grid"}, {"sigma2": -1.0}):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


# ---------------------------------------------------------------- training runs

def test_same_seed_same_model(blobs):
    train, _ = blobs
    spec = blobs_spec(4, 3, 4, 8)
    a = train_hyper(train, small_config(seed=3), spec)
    b = train_hyper(train, small_config(seed=3), spec)
    c = train_hyper(train, small_config(seed=4), spec)
    pa, pb, pc = params_of(a.model), params_of(b.model), params_of(c.model)
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)
    assert not all(np.array_equal(pa[k], pc[k]) for k in pa)
    assert [r.total for r in a.history] == [r.total for r in b.history]


def test_hyper_loss_trends_down(blobs):
    train, _ = blobs
    run = train_hyper(train, small_config(steps=400), blobs_spec(4, 3, 4, 8))
    totals = np.array([r.total for r in run.history])
    assert totals[-50:].mean() < totals[:50].mean()
    assert run.optimizer_steps == 400 and len(run.history) == 400


def test_hyper_tracks_linear_optimum(linear):
    inst, ds, cfg, spec = linear
    run = train_hyper(ds, cfg, spec)
    for beta in default_beta_grid(-2, 0, 0.5):
        best = cvib_linear(closed_form_A(inst, beta), inst, beta)
        got = cvib_linear(encoder_linear_map(run.model, beta), inst, beta)
        assert got >= best - 1e-12
        assert (got - best) / best < 0.01


def test_vib_converges_on_linear(linear):
    inst, ds, cfg, spec = linear
    run = train_vib(ds, 0.1, cfg, spec)
    target = closed_form_A(inst, 0.1)
    assert np.linalg.norm(encoder_linear_map(run.model, 0.1) - target) / np.linalg.norm(target) < 1e-3
    assert run.beta == 0.1


def test_vib_parameter_count_excludes_adjustment(blobs):
    train, _ = blobs
    spec = blobs_spec(4, 3, 4, 8)
    cfg = small_config(steps=1)
    hyper, vib = train_hyper(train, cfg, spec), train_vib(train, 0.1, cfg, spec)
    assert vib.parameter_count == hyper.parameter_count - extra_parameter_count(spec.adjustable_layers())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    ds = Dataset(np.full((8, 2), 1e3), np.full(8, 1e3), "regression")
    spec = linear_spec(2, 2, [1.0, 1.0])
    with pytest.raises(TrainingDiverged):
        train_vib(ds, 0.1, TrainConfig(steps=500, batch_size=8, lr=1e150, noise="expected"), spec)


def test_encoder_linear_map_rejects_nonlinear(blobs):
    train, _ = blobs
    run = train_hyper(train, small_config(steps=1), blobs_spec(4, 3, 4, 8))
    with pytest.raises(ValueError):
        encoder_linear_map(run.model, 0.1)


# ---------------------------------------------------------------- grid search and sweeps

def test_grid_bookkeeping(blobs):
    train, test = blobs
    spec = blobs_spec(4, 3, 4, 8)
    cfg = small_config(steps=150)
    grid = [1e-3, 1e-2, 1e-1]
    result = grid_search(train, grid, cfg, spec, test)
    assert result.optimizer_steps == 3 * 150
    assert sorted(result.runs) == grid
    total = sum(result.run_seconds.values())
    assert abs(result.wall_seconds - total) / result.wall_seconds < 0.10
    curve = SweepCurve([(b, result.metrics[b]) for b in grid])
    assert result.best_beta == select_best(curve, "classification")
    single = grid_search(train, [0.05], cfg, spec, test)
    assert single.best_beta == 0.05


def test_selection_prefers_score_then_small_beta():
    curve = SweepCurve([(b, Metrics(b, accuracy=a)) for b, a in ((1e-3, 0.8), (1e-2, 0.9), (1e-1, 0.9))])
    assert select_best(curve, "classification") == 1e-2
    reg = SweepCurve([(b, Metrics(b, mse=e)) for b, e in ((1e-3, 0.5), (1e-2, 0.2), (1e-1, 0.3))])
    assert select_best(reg, "regression") == 1e-2


def test_default_grid():
    grid = default_beta_grid()
    assert len(grid) == 11
    assert grid[0] == pytest.approx(1e-5) and grid[-1] == 1.0
    np.testing.assert_allclose(np.diff(np.log10(grid)), 0.5)


def test_sweep_echoes_betas_and_is_reproducible(blobs):
    train, test = blobs
    run = train_hyper(train, small_config(), blobs_spec(4, 3, 4, 8))
    grid = default_beta_grid(-3, 0, 1.0)
    a = sweep(run.model, grid, test, Channel(0.01), RandomStream(5))
    b = sweep(run.model, grid, test, Channel(0.01), RandomStream(5))
    assert len(a) == len(grid) and a.betas == grid
    assert [m.beta for _, m in a.points] == grid
    assert a.column("total") == b.column("total") and a.column("accuracy") == b.column("accuracy")


def test_checkpointed_model_reproduces_sweep(tmp_path, blobs):
    train, test = blobs
    spec = blobs_spec(4, 3, 4, 8)
    run = train_hyper(train, small_config(), spec)
    save_model(tmp_path / "m.ckpt", run.model, spec, True, {"note": "x"})
    model, spec2, meta = load_model(tmp_path / "m.ckpt")
    assert spec2 == spec and meta["note"] == "x"
    grid = [1e-3, 1.0]
    a = sweep(run.model, grid, test, Channel(0.01), RandomStream(1))
    b = sweep(model, grid, test, Channel(0.01), RandomStream(1))
    assert a.column("total") == b.column("total")


# ---------------------------------------------------------------- evaluation

def identity_classifier():
    enc = Encoder(2, 2, None, RandomStream(0), adjusted=False, mode="deterministic")
    enc.mu_head.W.data[...] = np.eye(2)
    enc.mu_head.b.data[...] = 0.0
    dec = Decoder(Architecture([DenseSpec(2, 2, "identity")]), adjusted=False)
    dec.stack.layers[0].W.data[...] = np.eye(2)
    dec.stack.layers[0].b.data[...] = 0.0
    return SplitModel(enc, dec, "classification")


def test_evaluate_toy_accuracy():
    model = identity_classifier()
    x = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
    channel = Channel(1e-6)  # far too small to flip a prediction; a noiseless channel has no rate
    perfect = evaluate(model, 0.1, Dataset(x, [0, 1, 0], "classification"), channel, RandomStream(0))
    assert perfect.accuracy == 1.0 and math.isnan(perfect.mse)
    partial = evaluate(model, 0.1, Dataset(x, [0, 1, 1], "classification"), channel, RandomStream(0))
    assert partial.accuracy == pytest.approx(2 / 3)
    chunked = evaluate(model, 0.1, Dataset(x, [0, 1, 1], "classification"), channel, RandomStream(0),
                       chunk=2)
    assert chunked.accuracy == partial.accuracy
    assert chunked.rate == pytest.approx(partial.rate, rel=1e-12)


def test_evaluate_exact_regression():
    enc = Encoder(2, 2, None, RandomStream(0), adjusted=False, mode="deterministic", head_bias=False)
    enc.mu_head.W.data[...] = np.eye(2)
    model = SplitModel(enc, Decoder.linear([1.0, 2.0]), "regression")
    x = RandomStream(1).normal((10, 2))
    m = evaluate(model, 0.5, Dataset(x, x @ np.array([1.0, 2.0]), "regression"), Channel(1e-6),
                 RandomStream(0), noise="expected")
    assert m.mse == 0.0 and math.isnan(m.accuracy)
    assert m.total == pytest.approx(m.distortion + 0.5 * m.rate)
