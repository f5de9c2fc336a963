import numpy as np
import pytest
from hypothesis import given, strategies as st

from hypervib import diffcore as dc
from hypervib.data_io import gen_linear_instance
from hypervib.diffcore import RandomStream
from hypervib.linear_oracle import (LinearInstance, build_theorem_construction, closed_form_A, cvib_linear,
                                    grad_wrt_A, orthonormal_completion, regression_map, verify_construction)
from hypervib.objective import vib_batch_loss
from hypervib.pipeline import Channel
from hypervib.training import build_model, linear_spec

GRID = np.logspace(-5, 1, 13)


def instance(n=3, d=4, seed=0, sigma2=0.01, noise_std=0.1):
    return gen_linear_instance(n, d, 64 * n, noise_std, seed, sigma2=sigma2)[0]


def one_dim():
    """n = d = 1, X = [1, -1], y = X, B = 1, so y X^T (X X^T)^{-1} = 1."""
    return LinearInstance(np.array([[1.0, -1.0]]), np.array([[1.0, -1.0]]), np.array([1.0]), 0.1)


def linear_model(inst, A):
    """linear_spec model whose encoder map is exactly A (second layer is the identity)."""
    model = build_model(linear_spec(inst.n, inst.d, inst.B), adjusted=False, rng=RandomStream(0))
    model.encoder.body.layers[0].W.data[...] = A
    model.encoder.mu_head.W.data[...] = np.eye(inst.d)
    return model


def load_construction(inst, constr):
    model = build_model(linear_spec(inst.n, inst.d, inst.B), adjusted=True, rng=RandomStream(0))
    for layer, W, u, v in ((model.encoder.body.layers[0], constr.W1, constr.u1, constr.v1),
                           (model.encoder.mu_head, constr.W2, constr.u2, constr.v2)):
        layer.W.data[...] = W
        layer.u.data[...] = u
        layer.v.data[...] = v
    return model


# ---------------------------------------------------------------- the loss

def test_unit_noise_constant_vanishes():
    inst = LinearInstance(np.eye(2), np.zeros((1, 2)), np.array([1.0, 0.0]), 1.0)
    # with sigma2 = 1 the constant is ||B||^2 + beta/2 (d - 0 - d) = 1
    assert cvib_linear(np.zeros((2, 2)), inst, 0.7) == pytest.approx(1.0, abs=1e-15)


def test_loss_matches_pipeline_with_expected_noise():
    rng = np.random.default_rng(1)
    for seed in range(5):
        inst = instance(seed=seed)
        A = rng.normal(size=(inst.d, inst.n))
        model = linear_model(inst, A)
        x, y = inst.X.T, inst.y.reshape(-1)
        for beta in (1e-3, 0.1, 2.0):
            rd = vib_batch_loss(model, x, y, beta, Channel(inst.sigma2), RandomStream(0), noise="expected")
            ref = cvib_linear(A, inst, beta)
            assert abs(rd.total - ref) / abs(ref) < 1e-10


def test_closed_form_is_minimum():
    rng = np.random.default_rng(2)
    inst = instance(seed=3)
    for beta in (1e-3, 0.1, 1.0):
        A = closed_form_A(inst, beta)
        best = cvib_linear(A, inst, beta)
        for _ in range(300):
            delta = rng.normal(size=A.shape) * 10.0 ** rng.uniform(-4, 0)
            assert cvib_linear(A + delta, inst, beta) >= best - 1e-14


def test_gradient_vanishes_at_closed_form():
    for seed in range(5):
        inst = instance(seed=seed)
        for beta in (0.01, 0.1, 1.0):
            g = grad_wrt_A(closed_form_A(inst, beta), inst, beta)
            assert np.abs(g).max() < 1e-10


def test_gradient_matches_finite_differences_and_autodiff():
    rng = np.random.default_rng(4)
    inst = instance(seed=4)
    beta = 0.3
    A = rng.normal(size=(inst.d, inst.n))
    g = grad_wrt_A(A, inst, beta)
    h = 1e-5
    fd = np.zeros_like(A)
    for idx in np.ndindex(*A.shape):
        e = np.zeros_like(A)
        e[idx] = h
        fd[idx] = (cvib_linear(A + e, inst, beta) - cvib_linear(A - e, inst, beta)) / (2 * h)
    assert np.abs(fd - g).max() / np.abs(g).max() < 1e-6

    model = linear_model(inst, A)
    rd = vib_batch_loss(model, inst.X.T, inst.y.reshape(-1), beta, Channel(inst.sigma2), RandomStream(0),
                        noise="expected")
    W1 = model.encoder.body.layers[0].W
    auto = dc.backward(rd.loss, {"W1": W1})["W1"]  # W2 = I, so dL/dW1 = dL/dA
    assert np.abs(auto - g).max() / np.abs(g).max() < 1e-10


def test_one_dimensional_example():
    inst = one_dim()
    assert regression_map(inst) == pytest.approx(np.array([[1.0]]))
    assert closed_form_A(inst, 2.0)[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert abs(closed_form_A(inst, 2e6)[0, 0]) < 1.1e-6


def test_closed_form_ignores_channel_noise():
    a = instance(seed=5, sigma2=0.01)
    b = LinearInstance(a.X, a.y, a.B, 3.0)
    for beta in (0.01, 1.0):
        np.testing.assert_array_equal(closed_form_A(a, beta), closed_form_A(b, beta))


def test_closed_form_beta_must_be_positive():
    with pytest.raises(ValueError):
        closed_form_A(one_dim(), 0.0)


def test_zero_noise_loss_is_undefined():
    inst = LinearInstance(np.eye(2), np.zeros((1, 2)), np.array([1.0, 0.0]), 0.0)
    with pytest.raises(ValueError):
        cvib_linear(np.zeros((2, 2)), inst, 1.0)


def test_ill_conditioned_inputs_are_rejected():
    X = np.vstack([np.linspace(-1, 1, 64), np.linspace(-1, 1, 64) * (1 + 1e-15)])
    inst = LinearInstance(X, X[:1], np.array([1.0]), 0.1)
    with pytest.raises(np.linalg.LinAlgError):
        closed_form_A(inst, 1.0)


# ---------------------------------------------------------------- the construction

def test_completion_is_orthogonal():
    rng = np.random.default_rng(6)
    for d in range(1, 7):
        b = rng.normal(size=d)
        U = orthonormal_completion(b)
        np.testing.assert_allclose(U.T @ U, np.eye(d), atol=1e-13)
        np.testing.assert_allclose(U[:, 0], b / np.linalg.norm(b), atol=1e-15)


def test_construction_layout():
    inst = instance(seed=6)
    constr = build_theorem_construction(inst)
    first, second = constr.layers()
    U = orthonormal_completion(inst.B)
    for beta in (1e-3, 1.0, 7.0):
        W2b, _ = second.effective_params(beta)
        np.testing.assert_allclose(W2b, U, atol=1e-15)  # 2 * sigmoid(0) * U
        W1b, _ = first.effective_params(beta)
        assert np.all(W1b[1:] == 0)
    # v1 = ln 2 + 2 ln ||B|| with ||B|| = 1 gives scale 1/2 at beta = 2
    W1b, _ = first.effective_params(2.0)
    np.testing.assert_allclose(W1b[0], 0.5 * constr.W1[0], rtol=1e-14)


def test_construction_reproduces_closed_form():
    for seed in range(5):
        inst = instance(seed=seed)
        assert verify_construction(build_theorem_construction(inst), inst, GRID) < 1e-10
        scaled = LinearInstance(inst.X, inst.y, 10.0 * inst.B, inst.sigma2)
        assert verify_construction(build_theorem_construction(scaled), scaled, GRID) < 1e-10


def test_construction_through_the_pipeline():
    from hypervib.training import encoder_linear_map
    inst = instance(seed=7)
    model = load_construction(inst, build_theorem_construction(inst))
    for beta in GRID:
        target = closed_form_A(inst, beta)
        assert np.linalg.norm(encoder_linear_map(model, beta) - target) / np.linalg.norm(target) < 1e-10


def test_wrong_gate_offset_is_detected():
    inst = instance(seed=8)
    constr = build_theorem_construction(inst)
    constr.v1 = constr.v1 + 0.5
    assert verify_construction(constr, inst, GRID) > 1e-2


def test_verify_needs_a_grid():
    inst = instance()
    with pytest.raises(ValueError):
        verify_construction(build_theorem_construction(inst), inst, [])


# ---------------------------------------------------------------- properties

@given(st.integers(0, 10_000), st.floats(0.01, 5.0), st.floats(0.0, 1.0))
def test_loss_is_convex_along_segments(seed, beta, t):
    inst = instance(n=2, d=3, seed=seed % 50)
    rng = np.random.default_rng(seed)
    A, C = rng.normal(size=(2, 3, 2))
    mid = cvib_linear(t * A + (1 - t) * C, inst, beta)
    assert mid <= t * cvib_linear(A, inst, beta) + (1 - t) * cvib_linear(C, inst, beta) + 1e-12


@given(st.integers(0, 10_000), st.floats(0.01, 5.0))
def test_closed_form_beats_random_maps(seed, beta):
    inst = instance(n=2, d=2, seed=seed % 50)
    A = np.random.default_rng(seed).normal(size=(2, 2))
    assert cvib_linear(closed_form_A(inst, beta), inst, beta) <= cvib_linear(A, inst, beta) + 1e-14


def test_gradient_descent_reaches_closed_form():
    inst = instance(seed=9)
    for beta in (0.01, 0.1, 1.0):
        target = closed_form_A(inst, beta)
        # step 1/L for the quadratic: L = 2 (||B||^2 + beta/2) lambda_max(X X^T / N)
        lip = 2.0 * (float(inst.B @ inst.B) + 0.5 * beta) * np.linalg.eigvalsh(inst.X @ inst.X.T / inst.N).max()
        A = np.zeros_like(target)
        for _ in range(10_000):
            A -= grad_wrt_A(A, inst, beta) / lip
            if np.linalg.norm(A - target) / np.linalg.norm(target) < 1e-3:
                break
        assert np.linalg.norm(A - target) / np.linalg.norm(target) < 1e-3
