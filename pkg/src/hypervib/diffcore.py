"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its parents and an adjoint closure on the output
tensor, so the computation graph is built while the forward pass runs and
node ids increase in topological order by construction.
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "NodeRecord",
    "RandomStream",
    "DiffError",
    "ShapeError",
    "NonFiniteError",
    "GraphStateError",
    "as_tensor",
    "backward",
    "grad_check",
    "finite_checks",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "sigmoid",
    "log",
    "exp",
    "square",
    "relu",
    "tanh",
    "softplus",
    "maximum",
    "reshape",
    "transpose",
    "sum",
    "mean",
    "softmax_cross_entropy",
    "squared_error",
    "conv2d",
]


class DiffError(Exception):
    """Base class for failures raised by the differentiation engine."""


class ShapeError(DiffError, ValueError):
    pass


class NonFiniteError(DiffError, FloatingPointError):
    pass


class GraphStateError(DiffError, RuntimeError):
    pass


_ids = itertools.count()
_check_finite = True


@contextlib.contextmanager
def finite_checks(enabled: bool) -> Iterator[None]:
    """Temporarily enable or disable non-finite detection on forward outputs."""
    global _check_finite
    previous = _check_finite
    _check_finite = enabled
    try:
        yield
    finally:
        _check_finite = previous


class Tensor:
    """An n-dimensional float64 array that can take part in a graph."""

    __array_priority__ = 1000  # make ndarray (op) Tensor defer to Tensor

    __slots__ = ("data", "requires_grad", "grad", "name", "op", "id", "_parents", "_adjoint")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self.op = "leaf"
        self.id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._adjoint: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None) -> "Tensor":
        return sum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(op: str, data: np.ndarray, parents: Sequence[Tensor], adjoint) -> Tensor:
    out = Tensor.__new__(Tensor)
    if data.ndim == 0:
        data = data.reshape(1)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out.id = next(_ids)
    out._parents = tuple(parents)
    out.requires_grad = any(p.requires_grad for p in parents)
    out._adjoint = adjoint
    if _check_finite and not np.all(np.isfinite(data)):
        raise NonFiniteError(
            f"node {out.id} ({op}) produced non-finite values from inputs "
            f"{[p.shape for p in parents]}"
        )
    return out


def _forward(op: str, fn, *arrays):
    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return fn(*arrays)
    except ValueError as exc:
        shapes = ", ".join(str(a.shape) for a in arrays)
        raise ShapeError(f"{op}: incompatible shapes ({shapes}): {exc}") from None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# --------------------------------------------------------------------------
# elementwise binary ops (numpy broadcasting; a vector broadcasts over rows)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _forward("add", np.add, a.data, b.data)
    return _node("add", out, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _forward("sub", np.subtract, a.data, b.data)
    return _node("sub", out, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _forward("mul", np.multiply, a.data, b.data)
    return _node("mul", out, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _forward("div", np.divide, a.data, b.data)

    def adjoint(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _node("div", out, (a, b), adjoint)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _node("matmul", out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# --------------------------------------------------------------------------
# elementwise unary ops


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # 1 / (1 + e^-x) = exp(-log(1 + e^-x)); logaddexp never overflows
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _stable_sigmoid(a.data)
    return _node("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def gate(u, v, c: float) -> Tensor:
    """sigmoid(u * c + v) for a constant c, as a single node."""
    u, v = as_tensor(u), as_tensor(v)
    s = _stable_sigmoid(_forward("gate", lambda a, b: a * c + b, u.data, v.data))

    def adjoint(g):
        ds = g * s * (1.0 - s)
        return (_unbroadcast(ds * c, u.shape), _unbroadcast(ds, v.shape))

    return _node("gate", s, (u, v), adjoint)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = _forward("log", np.log, a.data)
    return _node("log", out, (a,), lambda g: (g / a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = _forward("exp", np.exp, a.data)
    return _node("exp", out, (a,), lambda g: (g * out,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _node("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _node("softplus", out, (a,), lambda g: (g * _stable_sigmoid(x),))


def maximum(a, floor: float) -> Tensor:
    """Elementwise max against a constant; the gradient passes where a > floor."""
    a = as_tensor(a)
    mask = a.data > floor
    return _node("maximum", np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


# --------------------------------------------------------------------------
# shape ops and reductions


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = _forward("reshape", np.reshape, a.data, shape)
    return _node("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d tensor, got {a.shape}")
    return _node("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    if axis is None:
        out = np.array([a.data.sum()])
        return _node("sum", out, (a,), lambda g: (np.broadcast_to(g.reshape(()), a.shape).copy(),))
    out = a.data.sum(axis=axis)
    return _node("sum", out, (a,),
                 lambda g: (np.broadcast_to(np.expand_dims(g.reshape(out.shape), axis), a.shape).copy(),))


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return div(sum(a, axis), float(count))


# --------------------------------------------------------------------------
# losses


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Per-sample -log softmax(logits)[label], computed through log-sum-exp.

    ``logits`` is (M, K); ``labels`` is an integer array of length M.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be (M, K), got {logits.shape}")
    m, k = logits.shape
    if labels.shape != (m,):
        raise ShapeError(f"softmax_cross_entropy: labels shape {labels.shape} does not match {m} rows")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValueError("softmax_cross_entropy: labels must be integers")
        labels = labels.astype(np.int64)
    if m and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"softmax_cross_entropy: label out of range [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(m)
    out = logsum - z[rows, labels]

    def adjoint(g):
        p = np.exp(z - logsum[:, None])
        p[rows, labels] -= 1.0
        return (p * g[:, None],)

    return _node("softmax_cross_entropy", out, (logits,), adjoint)


def squared_error(pred, target) -> Tensor:
    """Per-sample squared Euclidean error summed over the last axis."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"squared_error: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    if diff.ndim == 1:
        out = diff * diff
        return _node("squared_error", out, (pred, target),
                     lambda g: (2.0 * g * diff, -2.0 * g * diff))
    out = (diff * diff).sum(axis=-1)

    def adjoint(g):
        gd = 2.0 * g[..., None] * diff
        return (gd, -gd)

    return _node("squared_error", out, (pred, target), adjoint)


# --------------------------------------------------------------------------
# convolution


def conv2d(x, w, padding: int = 0) -> Tensor:
    """Stride-1 cross-correlation of x (M, C, H, W) with kernels w (F, C, K, K)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    kh, kw = w.shape[2], w.shape[3]
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"conv2d: kernel {w.shape[2:]} larger than padded input {xp.shape[2:]}")
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    out = np.einsum("mchwij,fcij->mfhw", windows, w.data, optimize=True)
    oh, ow = out.shape[2], out.shape[3]

    def adjoint(g):
        gw = np.einsum("mchwij,mfhw->fcij", windows, g, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + oh, j:j + ow] += np.einsum("mfhw,fc->mchw", g, w.data[:, :, i, j])
        if padding:
            gxp = gxp[:, :, padding:-padding, padding:-padding]
        return (gxp, gw)

    return _node("conv2d", out, (x, w), adjoint)


# --------------------------------------------------------------------------
# reverse pass


def _topological(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for parent in node._parents:
            if parent.id not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(root: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every trainable leaf.

    Returns the gradients for ``params`` by name; parameters the root does
    not depend on get zero arrays.
    """
    if root.size != 1:
        raise GraphStateError(f"backward needs a scalar root, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {root.id: np.ones_like(root.data)}
    if root.requires_grad:
        for node in reversed(_topological(root)):
            g = grads.pop(node.id, None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._adjoint(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg
    if params is None:
        return {}
    return {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }


@dataclass(frozen=True)
class NodeRecord:
    id: int
    op: str
    inputs: tuple[int, ...]
    shape: tuple[int, ...]


class Graph:
    """A named-input, named-output computation built by a Python function.

    ``builder`` receives a dict of input tensors and returns either a tensor
    or a dict of named output tensors. Inputs listed in ``trainable`` are
    marked ``requires_grad``.
    """

    def __init__(self, builder: Callable[[dict[str, Tensor]], Tensor | Mapping[str, Tensor]],
                 trainable: Sequence[str] | None = None):
        self.builder = builder
        self.trainable = None if trainable is None else tuple(trainable)
        self._inputs: dict[str, Tensor] | None = None
        self._outputs: dict[str, Tensor] | None = None

    def evaluate(self, inputs: Mapping[str, object]) -> dict[str, np.ndarray]:
        bound = {}
        for name, value in inputs.items():
            grad = self.trainable is None or name in self.trainable
            data = value.data if isinstance(value, Tensor) else value
            bound[name] = Tensor(np.array(data, dtype=np.float64), requires_grad=grad, name=name)
        result = self.builder(bound)
        outputs = {"output": result} if isinstance(result, Tensor) else dict(result)
        self._inputs, self._outputs = bound, outputs
        return {name: t.data.copy() for name, t in outputs.items()}

    @property
    def nodes(self) -> list[NodeRecord]:
        if self._outputs is None:
            raise GraphStateError("graph has not been evaluated")
        seen: dict[int, Tensor] = {}
        stack = list(self._outputs.values())
        while stack:
            t = stack.pop()
            if t.id in seen:
                continue
            seen[t.id] = t
            stack.extend(t._parents)
        return [NodeRecord(t.id, t.op, tuple(p.id for p in t._parents), t.shape)
                for t in sorted(seen.values(), key=lambda t: t.id)]

    def backward(self, output: str | None = None) -> dict[str, np.ndarray]:
        if self._outputs is None or self._inputs is None:
            raise GraphStateError("backward called before evaluate")
        if output is None:
            if len(self._outputs) != 1:
                raise GraphStateError("graph has several outputs; name the scalar to differentiate")
            output = next(iter(self._outputs))
        root = self._outputs[output]
        for t in self._inputs.values():
            t.zero_grad()
        trainable = {n: t for n, t in self._inputs.items() if t.requires_grad}
        return backward(root, trainable)


def grad_check(builder: Callable[[dict[str, Tensor]], Tensor], point: Mapping[str, object],
               step: float = 1e-5, trainable: Sequence[str] | None = None) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Relative error per entry is |a - b| / max(|a|, |b|, 1e-12).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = {k: np.array(v.data if isinstance(v, Tensor) else v, dtype=np.float64) for k, v in point.items()}
    graph = Graph(builder, trainable)
    graph.evaluate(base)
    analytic = graph.backward()

    def value(inputs):
        with finite_checks(True):
            out = builder({k: Tensor(v) for k, v in inputs.items()})
        if isinstance(out, Mapping):
            (out,) = out.values()
        return out.item()

    worst = 0.0
    for name, grad in analytic.items():
        flat = base[name].reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = value(base)
            flat[i] = orig - step
            down = value(base)
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = gflat[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# randomness


class RandomStream:
    """Seeded counter-based random source (Philox) with independent splitting."""

    def __init__(self, seed: int | np.random.SeedSequence = 0):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            if seed < 0 or seed >= 2**64:
                raise ValueError("seed must be a 64-bit unsigned integer")
            self._seq = np.random.SeedSequence(int(seed))
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    @property
    def seed(self) -> int:
        return int(self._seq.entropy)

    def split(self, k: int) -> list["RandomStream"]:
        if k < 1:
            raise ValueError("split needs k >= 1")
        return [RandomStream(s) for s in self._seq.spawn(k)]

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
