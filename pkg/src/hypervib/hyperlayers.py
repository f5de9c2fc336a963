"""Layers whose weights are rescaled by a learned function of beta.

A dense layer keeps its base ``W`` and ``b`` plus two vectors ``u`` and
``v``; for a given beta the scale ``s = sigmoid(u * ln(beta) + v)`` multiplies
each output row of ``W`` and each entry of ``b``. A convolutional layer does
the same per (filter, input channel) kernel block, with a separate scalar
scale for each filter bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

from . import diffcore as dc
from .diffcore import RandomStream, Tensor

ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid")


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not beta > 0 or not math.isfinite(beta):
        raise ValueError(f"beta must be a positive finite number, got {beta}")
    return beta


def beta_scale(u, v, beta: float) -> Tensor:
    """sigmoid(u * ln(beta) + v), differentiable in u and v."""
    beta = _check_beta(beta)
    return dc.gate(u, v, math.log(beta))


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "identity":
        return x
    if kind == "relu":
        return dc.relu(x)
    if kind == "tanh":
        return dc.tanh(x)
    if kind == "sigmoid":
        return dc.sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# --------------------------------------------------------------------------
# architecture descriptors


@dataclass(frozen=True)
class DenseSpec:
    in_features: int
    out_features: int
    activation: str = "relu"
    bias: bool = True


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    activation: str = "relu"
    padding: int = 0


@dataclass(frozen=True)
class FlattenSpec:
    pass


LayerSpec = Union[DenseSpec, ConvSpec, FlattenSpec]


@dataclass(frozen=True)
class Architecture:
    """Ordered layer descriptors. ``input_shape`` is (C, H, W) when conv layers lead."""

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        self.validate()

    def validate(self) -> None:
        shape = self.input_shape
        for i, spec in enumerate(self.layers):
            if isinstance(spec, DenseSpec):
                if spec.in_features < 1 or spec.out_features < 1:
                    raise ValueError(f"layer {i}: dense sizes must be positive")
                if spec.activation not in ACTIVATIONS:
                    raise ValueError(f"layer {i}: unknown activation {spec.activation!r}")
                if shape is not None and shape != (spec.in_features,):
                    raise ValueError(f"layer {i}: expects {spec.in_features} features, previous gives {shape}")
                shape = (spec.out_features,)
            elif isinstance(spec, ConvSpec):
                if min(spec.in_channels, spec.out_channels, spec.kernel) < 1 or spec.padding < 0:
                    raise ValueError(f"layer {i}: invalid conv sizes")
                if spec.activation not in ACTIVATIONS:
                    raise ValueError(f"layer {i}: unknown activation {spec.activation!r}")
                if shape is not None:
                    if len(shape) != 3 or shape[0] != spec.in_channels:
                        raise ValueError(f"layer {i}: expects {spec.in_channels} channels, previous gives {shape}")
                    h = shape[1] + 2 * spec.padding - spec.kernel + 1
                    w = shape[2] + 2 * spec.padding - spec.kernel + 1
                    if h < 1 or w < 1:
                        raise ValueError(f"layer {i}: kernel larger than its input")
                    shape = (spec.out_channels, h, w)
            elif isinstance(spec, FlattenSpec):
                if shape is not None:
                    shape = (int(np.prod(shape)),)
            else:
                raise TypeError(f"layer {i}: unsupported descriptor {spec!r}")

    @property
    def output_width(self) -> int:
        for spec in reversed(self.layers):
            if isinstance(spec, DenseSpec):
                return spec.out_features
        raise ValueError("architecture has no dense output layer")


def extra_parameter_count(arch: Architecture | Sequence[LayerSpec]) -> int:
    """Parameters the beta adjustment adds on top of the base network."""
    total = 0
    for spec in getattr(arch, "layers", arch):
        if isinstance(spec, DenseSpec):
            total += 2 * spec.out_features
        elif isinstance(spec, ConvSpec):
            total += 2 * spec.out_channels * (spec.in_channels + 1)
    return total


# --------------------------------------------------------------------------
# layers


def _fan_in_uniform(rng: RandomStream, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class BetaAdjustedDense:
    """Dense layer computing s(beta) * (x W^T + b) for a batch x of shape (M, D_in).

    With ``adjusted=False`` the layer is a plain dense layer and carries no
    u, v parameters.
    """

    def __init__(self, in_features: int, out_features: int, rng: RandomStream | None = None,
                 activation: str = "identity", bias: bool = True, adjusted: bool = True,
                 v_init: float = 0.0):
        rng = rng or RandomStream(0)
        self.in_features = in_features
        self.out_features = out_features
        self.activation = activation
        self.adjusted = adjusted
        self.W = Tensor(_fan_in_uniform(rng, (out_features, in_features), in_features), requires_grad=True)
        self.b = Tensor(_fan_in_uniform(rng, (out_features,), in_features), requires_grad=True) if bias else None
        if adjusted:
            self.u = Tensor(np.zeros(out_features), requires_grad=True)
            self.v = Tensor(np.full(out_features, float(v_init)), requires_grad=True)
        else:
            self.u = self.v = None

    def parameters(self) -> dict[str, Tensor]:
        params = {"W": self.W}
        if self.b is not None:
            params["b"] = self.b
        if self.adjusted:
            params["u"] = self.u
            params["v"] = self.v
        return params

    def scale(self, beta: float) -> Tensor | None:
        if not self.adjusted:
            _check_beta(beta)
            return None
        return beta_scale(self.u, self.v, beta)

    def effective_params(self, beta: float) -> tuple[np.ndarray, np.ndarray | None]:
        """W(beta) and b(beta) as arrays: rows of W and entries of b scaled by s(beta)."""
        s = self.scale(beta)
        if s is None:
            return self.W.data.copy(), None if self.b is None else self.b.data.copy()
        W = s.data[:, None] * self.W.data
        b = None if self.b is None else s.data * self.b.data
        return W, b

    def pre_activation(self, x: Tensor, beta: float) -> Tensor:
        x = dc.as_tensor(x)
        if x.ndim == 1:
            x = dc.reshape(x, (1, x.shape[0]))
        if x.shape[-1] != self.in_features:
            raise dc.ShapeError(f"dense layer expects width {self.in_features}, got input {x.shape}")
        s = self.scale(beta)
        out = dc.matmul(x, dc.transpose(self.W))
        if self.b is not None:
            out = dc.add(out, self.b)
        if s is not None:
            out = dc.mul(out, s)
        return out

    def __call__(self, x: Tensor, beta: float) -> Tensor:
        return activate(self.pre_activation(x, beta), self.activation)


class BetaAdjustedConv:
    """Stride-1 convolution whose kernel blocks and biases are scaled by beta.

    Kernel ``W`` is (C_out, C_in, K, K); ``u1, v1`` are (C_out, C_in) and
    ``u2, v2`` are (C_out,).
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: RandomStream | None = None,
                 activation: str = "identity", padding: int = 0, adjusted: bool = True,
                 v_init: float = 0.0):
        rng = rng or RandomStream(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.activation = activation
        self.padding = padding
        self.adjusted = adjusted
        fan_in = in_channels * kernel * kernel
        self.W = Tensor(_fan_in_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in),
                        requires_grad=True)
        self.b = Tensor(_fan_in_uniform(rng, (out_channels,), fan_in), requires_grad=True)
        if adjusted:
            self.u1 = Tensor(np.zeros((out_channels, in_channels)), requires_grad=True)
            self.v1 = Tensor(np.full((out_channels, in_channels), float(v_init)), requires_grad=True)
            self.u2 = Tensor(np.zeros(out_channels), requires_grad=True)
            self.v2 = Tensor(np.full(out_channels, float(v_init)), requires_grad=True)
        else:
            self.u1 = self.v1 = self.u2 = self.v2 = None

    def parameters(self) -> dict[str, Tensor]:
        params = {"W": self.W, "b": self.b}
        if self.adjusted:
            params.update(u1=self.u1, v1=self.v1, u2=self.u2, v2=self.v2)
        return params

    def effective_tensors(self, beta: float) -> tuple[Tensor, Tensor]:
        if not self.adjusted:
            _check_beta(beta)
            return self.W, self.b
        s1 = beta_scale(self.u1, self.v1, beta)
        s2 = beta_scale(self.u2, self.v2, beta)
        kernel = dc.mul(self.W, dc.reshape(s1, (self.out_channels, self.in_channels, 1, 1)))
        return kernel, dc.mul(self.b, s2)

    def effective_params(self, beta: float) -> tuple[np.ndarray, np.ndarray]:
        kernel, bias = self.effective_tensors(beta)
        return kernel.data.copy(), bias.data.copy()

    def __call__(self, x: Tensor, beta: float) -> Tensor:
        kernel, bias = self.effective_tensors(beta)
        out = dc.conv2d(x, kernel, self.padding)
        out = dc.add(out, dc.reshape(bias, (1, self.out_channels, 1, 1)))
        return activate(out, self.activation)


class Flatten:
    def parameters(self) -> dict[str, Tensor]:
        return {}

    def __call__(self, x: Tensor, beta: float) -> Tensor:
        return dc.reshape(x, (x.shape[0], -1))


Layer = Union[BetaAdjustedDense, BetaAdjustedConv, Flatten]


@dataclass
class LayerStack:
    """Sequential layers built from an Architecture, sharing one beta per call."""

    arch: Architecture
    layers: list = field(default_factory=list)
    trainable: bool = True

    @classmethod
    def build(cls, arch: Architecture, rng: RandomStream, adjusted: bool = True,
              v_init: float = 0.0) -> "LayerStack":
        layers: list = []
        streams = rng.split(max(1, len(arch.layers)))
        for i, spec in enumerate(arch.layers):
            adj = adjusted
            if isinstance(spec, DenseSpec):
                layers.append(BetaAdjustedDense(spec.in_features, spec.out_features, streams[i],
                                                activation=spec.activation, bias=spec.bias,
                                                adjusted=adj, v_init=v_init))
            elif isinstance(spec, ConvSpec):
                layers.append(BetaAdjustedConv(spec.in_channels, spec.out_channels, spec.kernel, streams[i],
                                               activation=spec.activation, padding=spec.padding,
                                               adjusted=adj, v_init=v_init))
            else:
                layers.append(Flatten())
        return cls(arch, layers)

    def __call__(self, x: Tensor, beta: float) -> Tensor:
        for layer in self.layers:
            x = layer(x, beta)
        return x

    def __iter__(self) -> Iterator:
        return iter(self.layers)

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for i, layer in enumerate(self.layers):
            for name, t in layer.parameters().items():
                params[f"{i}.{name}"] = t
        return params

    def freeze(self) -> None:
        self.trainable = False
        for t in self.parameters().values():
            t.requires_grad = False


def parameter_count(params: dict[str, Tensor] | Sequence[Tensor]) -> int:
    values = params.values() if isinstance(params, dict) else params
    return int(sum(t.size for t in values))
