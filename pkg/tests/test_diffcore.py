import math
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from hypervib import diffcore as dc
from hypervib.diffcore import Graph, RandomStream, Tensor, backward, grad_check


def signed(rng, shape, lo=0.5, hi=1.5):
    """Entries bounded away from zero so relative gradient errors stay well conditioned."""
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


# ---------------------------------------------------------------- examples

def test_matmul_identity():
    out = Graph(lambda t: dc.matmul(t["a"], t["b"])).evaluate({"a": np.eye(2), "b": [[2.0, 0.0], [0.0, 3.0]]})
    np.testing.assert_array_equal(out["output"], [[2.0, 0.0], [0.0, 3.0]])


def test_sigmoid_at_zero():
    assert dc.sigmoid(Tensor(0.0)).item() == 0.5


def test_cross_entropy_uniform_logits():
    ce = dc.softmax_cross_entropy(Tensor(np.zeros((3, 10))), np.array([0, 4, 9]))
    np.testing.assert_allclose(ce.data, math.log(10), rtol=0, atol=1e-15)


def test_square_derivative():
    x = Tensor(3.0, requires_grad=True)
    grads = backward(dc.square(x), {"x": x})
    assert grads["x"][0] == 6.0


def test_sum_of_matrix_vector_product_gradient_repeats_x():
    rng = np.random.default_rng(0)
    W = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    x = rng.normal(size=(3, 1))
    grads = backward(dc.sum(dc.matmul(W, Tensor(x))), {"W": W})
    for row in grads["W"]:
        np.testing.assert_array_equal(row, x[:, 0])


def test_three_layer_network_gradients():
    rng = np.random.default_rng(1)
    point = {
        "W1": rng.normal(size=(4, 3)), "b1": rng.normal(size=4),
        "W2": rng.normal(size=(4, 4)), "b2": rng.normal(size=4),
        "W3": rng.normal(size=(2, 4)), "b3": rng.normal(size=2),
    }
    x = Tensor(rng.normal(size=(5, 3)))
    labels = np.array([0, 1, 1, 0, 1])

    def net(t):
        h = dc.tanh(dc.add(dc.matmul(x, dc.transpose(t["W1"])), t["b1"]))
        h = dc.sigmoid(dc.add(dc.matmul(h, dc.transpose(t["W2"])), t["b2"]))
        logits = dc.add(dc.matmul(h, dc.transpose(t["W3"])), t["b3"])
        return dc.mean(dc.softmax_cross_entropy(logits, labels))

    assert grad_check(net, point) < 1e-6


def test_grad_check_affine_is_exact():
    rng = np.random.default_rng(2)
    w = Tensor(rng.normal(size=(3, 2)))
    point = {"x": rng.normal(size=(4, 3)), "c": rng.normal(size=2)}
    f = lambda t: dc.sum(dc.add(dc.matmul(t["x"], w), t["c"]))
    assert grad_check(f, point) < 1e-10


def test_grad_check_sigmoid_composition():
    rng = np.random.default_rng(3)
    f = lambda t: dc.sum(dc.sigmoid(dc.mul(dc.sigmoid(t["x"]), t["y"])))
    assert grad_check(f, {"x": rng.normal(size=5), "y": signed(rng, 5)}, step=1e-5) < 1e-6


def test_grad_check_catches_corrupted_adjoint():
    def bad_square(a):
        return dc._node("bad_square", a.data * a.data, (a,), lambda g: (3.0 * g * a.data,))

    f = lambda t: dc.sum(bad_square(t["x"]))
    assert grad_check(f, {"x": np.array([0.7, -1.2, 2.0])}) > 1e-2


def test_backward_before_evaluate_fails():
    with pytest.raises(dc.GraphStateError):
        Graph(lambda t: dc.sum(t["x"])).backward()
    with pytest.raises(dc.GraphStateError):
        Graph(lambda t: dc.sum(t["x"])).nodes


def test_non_scalar_root_fails():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(dc.GraphStateError):
        backward(dc.mul(x, 2.0))


def test_unused_parameter_gets_zero_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones((2, 2)), requires_grad=True)
    grads = backward(dc.sum(x), {"x": x, "unused": unused})
    np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))


def test_gradients_accumulate_over_shared_inputs():
    x = Tensor(np.array([2.0]), requires_grad=True)
    grads = backward(dc.add(dc.mul(x, x), dc.mul(x, 3.0)), {"x": x})
    assert grads["x"][0] == 7.0


def test_overflow_is_reported_with_node():
    with dc.finite_checks(True):
        with pytest.raises(dc.NonFiniteError, match=r"\(exp\)"):
            dc.exp(Tensor(1000.0))
    with dc.finite_checks(False):
        assert math.isinf(dc.exp(Tensor(1000.0)).item())


def test_shape_mismatch_is_a_shape_error():
    with pytest.raises(dc.ShapeError):
        dc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(dc.ShapeError):
        dc.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_graph_nodes_are_topologically_ordered():
    g = Graph(lambda t: dc.sum(dc.tanh(dc.mul(t["x"], t["y"]))))
    g.evaluate({"x": np.ones(2), "y": np.ones(2)})
    position = {rec.id: i for i, rec in enumerate(g.nodes)}
    for rec in g.nodes:
        assert all(position[p] < position[rec.id] for p in rec.inputs)
    assert [r.op for r in g.nodes][-3:] == ["mul", "tanh", "sum"]


# ---------------------------------------------------------------- primitives vs finite differences

def _primitive_cases():
    # (name, builder, point generator)
    def pos(rng, shape, lo=0.5, hi=2.0):
        return rng.uniform(lo, hi, shape)

    return {
        "add": (lambda t, w: dc.add(t["a"], t["b"]), lambda r: {"a": r.normal(size=(3, 2)), "b": r.normal(size=2)}),
        "sub": (lambda t, w: dc.sub(t["a"], t["b"]), lambda r: {"a": r.normal(size=(3, 2)), "b": r.normal(size=(1, 2))}),
        "mul": (lambda t, w: dc.mul(t["a"], t["b"]), lambda r: {"a": signed(r, (3, 2)), "b": signed(r, 2)}),
        "div": (lambda t, w: dc.div(t["a"], t["b"]), lambda r: {"a": signed(r, (3, 2)), "b": signed(r, (3, 2))}),
        "neg": (lambda t, w: dc.neg(t["a"]), lambda r: {"a": r.normal(size=4)}),
        "matmul": (lambda t, w: dc.matmul(t["a"], t["b"]), lambda r: {"a": pos(r, (2, 3)), "b": pos(r, (3, 2))}),
        "sigmoid": (lambda t, w: dc.sigmoid(t["a"]), lambda r: {"a": r.uniform(-3, 3, 5)}),
        "log": (lambda t, w: dc.log(t["a"]), lambda r: {"a": pos(r, 5)}),
        "exp": (lambda t, w: dc.exp(t["a"]), lambda r: {"a": r.uniform(-2, 2, 5)}),
        "square": (lambda t, w: dc.square(t["a"]), lambda r: {"a": signed(r, 5, 0.2, 2.0)}),
        "relu": (lambda t, w: dc.relu(t["a"]), lambda r: {"a": signed(r, 5, 0.1, 2.0)}),
        "tanh": (lambda t, w: dc.tanh(t["a"]), lambda r: {"a": r.uniform(-2, 2, 5)}),
        "softplus": (lambda t, w: dc.softplus(t["a"]), lambda r: {"a": r.uniform(-3, 3, 5)}),
        "maximum": (lambda t, w: dc.maximum(t["a"], 0.3), lambda r: {"a": 0.3 + signed(r, 5, 0.1, 1.0)}),
        "gate": (lambda t, w: dc.gate(t["u"], t["v"], -1.7), lambda r: {"u": r.uniform(-1, 1, 4), "v": r.uniform(-1, 1, 4)}),
        "reshape": (lambda t, w: dc.reshape(t["a"], (3, 2)), lambda r: {"a": r.normal(size=(2, 3))}),
        "transpose": (lambda t, w: dc.transpose(t["a"]), lambda r: {"a": r.normal(size=(2, 3))}),
        "sum-axis": (lambda t, w: dc.sum(t["a"], axis=1), lambda r: {"a": r.normal(size=(3, 4))}),
        "mean": (lambda t, w: dc.mean(t["a"], axis=0), lambda r: {"a": r.normal(size=(3, 4))}),
        "cross-entropy": (lambda t, w: dc.softmax_cross_entropy(t["a"], np.array([0, 2, 1])),
                          lambda r: {"a": r.uniform(-1, 1, (3, 3))}),
        "squared-error": (lambda t, w: dc.squared_error(t["a"], t["b"]),
                          lambda r: (lambda a: {"a": a, "b": a + signed(r, (3, 2), 0.2, 1.0)})(r.normal(size=(3, 2)))),
        "conv2d": (lambda t, w: dc.conv2d(t["x"], t["k"], padding=1),
                   lambda r: {"x": pos(r, (2, 2, 4, 4)), "k": pos(r, (3, 2, 3, 3))}),
    }


@pytest.mark.parametrize("name", sorted(_primitive_cases()))
def test_primitive_adjoint_matches_finite_differences(name):
    build, draw = _primitive_cases()[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for _ in range(100):
        point = draw(rng)
        out_shape = build({k: Tensor(v) for k, v in point.items()}, None).shape
        # positive weights: no cancellation when outputs are summed into one input's gradient
        weights = Tensor(rng.uniform(0.5, 1.5, out_shape))
        worst = max(worst, grad_check(lambda t: dc.sum(dc.mul(build(t, None), weights)), point, step=1e-5))
    assert worst < 1e-6, f"{name}: {worst:.3e}"


# ---------------------------------------------------------------- properties

@given(hnp.arrays(np.float64, (3, 2), elements=st.floats(-5, 5)))
def test_evaluate_is_bitwise_deterministic(x):
    g = Graph(lambda t: dc.softplus(dc.matmul(t["x"], dc.transpose(t["x"]))))
    a = g.evaluate({"x": x})["output"]
    b = g.evaluate({"x": x})["output"]
    assert a.tobytes() == b.tobytes()


@given(st.integers(0, 2**31))
def test_backward_is_linear(seed):
    rng = np.random.default_rng(seed)
    W = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    x = Tensor(rng.normal(size=(2, 3)))
    f1 = lambda: dc.sum(dc.tanh(dc.matmul(x, W)))
    f2 = lambda: dc.sum(dc.square(dc.matmul(x, W)))
    g1 = backward(f1(), {"W": W})["W"]
    W.grad = None
    g2 = backward(f2(), {"W": W})["W"]
    W.grad = None
    g12 = backward(dc.add(f1(), f2()), {"W": W})["W"]
    np.testing.assert_allclose(g12, g1 + g2, rtol=0, atol=1e-12 * max(1.0, np.abs(g12).max()))


@given(st.integers(0, 2**63))
def test_random_stream_replays(seed):
    a, b = RandomStream(seed), RandomStream(seed)
    assert a.normal(5).tobytes() == b.normal(5).tobytes()
    assert a.uniform(0, 1, 3).tobytes() == b.uniform(0, 1, 3).tobytes()


def test_split_streams_differ_and_replay():
    first = [s.normal(8) for s in RandomStream(11).split(4)]
    again = [s.normal(8) for s in RandomStream(11).split(4)]
    for i in range(4):
        assert first[i].tobytes() == again[i].tobytes()
        for j in range(i):
            assert not np.array_equal(first[i], first[j])
    # children are uncorrelated enough to look independent
    big = [s.normal(20000) for s in RandomStream(3).split(3)]
    assert abs(np.corrcoef(big)[0, 1]) < 0.03
