"""Variational IB loss and its Monte Carlo average over sampled beta.

Information quantities are in nats. The constant entropy of the targets is
left out, so reported totals are offsets of the true bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import diffcore as dc
from .diffcore import RandomStream, Tensor
from .pipeline import Channel, GaussianCode, SplitModel, decode, encode, transmit

DISTORTIONS = ("cross-entropy", "squared-error")


def distortion_for(kind: str) -> str:
    return "cross-entropy" if kind == "classification" else "squared-error"


def kl_to_standard_prior(code: GaussianCode, sigma2: float) -> Tensor:
    """Per-sample KL( N(mu, diag(theta^2) + sigma2 I) || N(0, I) ), shape (M,)."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    if code.deterministic:
        if sigma2 == 0:
            raise ValueError("KL is undefined for a deterministic code over a noiseless channel")
        var = Tensor(np.full(code.mu.shape, float(sigma2)))
    else:
        var = dc.add(dc.square(code.theta), float(sigma2))
        if np.any(var.data <= 0):
            raise ValueError("theta^2 + sigma2 must be positive")
    mu = code.mu if code.mu.ndim == 2 else dc.reshape(code.mu, (1, -1))
    var = var if var.ndim == 2 else dc.reshape(var, (1, -1))
    d = mu.shape[1]
    inner = dc.sub(dc.add(dc.square(mu), var), dc.log(var))
    return dc.mul(dc.sub(dc.sum(inner, axis=1), float(d)), 0.5)


def distortion(y_hat: Tensor, y, kind: str) -> Tensor:
    """Per-sample distortion: -log softmax(y_hat)[y] or ||y - y_hat||^2."""
    if kind == "cross-entropy":
        return dc.softmax_cross_entropy(y_hat, np.asarray(y))
    if kind == "squared-error":
        target = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
        if y_hat.ndim == 2 and target.ndim == 1 and y_hat.shape[1] == 1 and target.shape[0] == y_hat.shape[0]:
            target = target[:, None]
        elif y_hat.ndim == 2 and target.ndim == 1 and y_hat.shape[0] == 1:
            target = target[None, :]
        return dc.squared_error(y_hat, Tensor(target))
    raise ValueError(f"unknown distortion {kind!r}")


@dataclass
class RateDistortion:
    distortion: float
    rate: float
    beta: float
    total: float
    loss: Tensor = field(repr=False, compare=False)
    outputs: Tensor | None = field(default=None, repr=False, compare=False)


def _affine_gain_energy(model: SplitModel, beta: float) -> Tensor:
    """||M(beta)||_F^2 of an affine decoder z -> M z + c; differentiable."""
    d = model.decoder.input_dim
    at_basis = decode(model.decoder, Tensor(np.eye(d)), beta)
    at_zero = decode(model.decoder, Tensor(np.zeros((1, d))), beta)
    return dc.sum(dc.square(dc.sub(at_basis, at_zero)))


def vib_batch_loss(model: SplitModel, x, y, beta: float, channel: Channel, rng: RandomStream,
                   L: int = 1, noise: str = "sample") -> RateDistortion:
    """Distortion + beta * rate on one minibatch.

    ``noise="sample"`` averages the distortion over L channel draws per
    sample. ``noise="expected"`` replaces the draw by its exact expectation,
    which is only defined for squared error through an affine decoder.
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if L < 1:
        raise ValueError("L must be >= 1")
    if beta < 0:
        raise ValueError("beta must be >= 0")
    kind = distortion_for(model.kind)
    # beta adjustment needs ln(beta); beta = 0 evaluates the layers at the smallest positive float
    layer_beta = beta if beta > 0 else np.finfo(float).tiny
    code, z = encode(model.encoder, x, layer_beta, rng)
    outputs = None
    if noise == "sample":
        per_sample = None
        for _ in range(L):
            outputs = decode(model.decoder, transmit(z, channel, rng), layer_beta)
            term = distortion(outputs, y, kind)
            per_sample = term if per_sample is None else dc.add(per_sample, term)
        if L > 1:
            per_sample = dc.div(per_sample, float(L))
        dist = dc.mean(per_sample)
    elif noise == "expected":
        if kind != "squared-error" or not model.decoder.is_affine():
            raise ValueError("expected-noise distortion needs squared error and an affine decoder")
        outputs = decode(model.decoder, z, layer_beta)
        dist = dc.mean(distortion(outputs, y, kind))
        if channel.sigma2 > 0:
            dist = dc.add(dist, dc.mul(_affine_gain_energy(model, layer_beta), channel.sigma2))
    else:
        raise ValueError(f"unknown noise mode {noise!r}")
    rate = dc.mean(kl_to_standard_prior(code, channel.sigma2))
    total = dc.add(dist, dc.mul(rate, float(beta)))
    return RateDistortion(dist.item(), rate.item(), float(beta), total.item(), total, outputs)


def sample_betas(rng: RandomStream, T: int, beta_range: tuple[float, float], sampling: str = "uniform") -> list[float]:
    a, b = beta_range
    if not (0 < a < b):
        raise ValueError(f"beta range must satisfy 0 < a < b, got [{a}, {b}]")
    if sampling == "uniform":
        return [float(v) for v in rng.uniform(a, b, size=T)]
    if sampling == "log-uniform":
        return [float(math.exp(v)) for v in rng.uniform(math.log(a), math.log(b), size=T)]
    raise ValueError(f"unknown beta sampling {sampling!r}")


@dataclass
class HyperStepLoss:
    loss: Tensor = field(repr=False)
    parts: list[RateDistortion]

    @property
    def value(self) -> float:
        return self.loss.item()

    @property
    def betas(self) -> list[float]:
        return [p.beta for p in self.parts]


def hyper_vib_step_loss(model: SplitModel, T: int, beta_range: tuple[float, float],
                        next_batch: Callable[[], tuple[np.ndarray, np.ndarray]], channel: Channel,
                        rng: RandomStream, L: int = 1, sampling: str = "uniform",
                        noise: str = "sample") -> HyperStepLoss:
    """Average of T VIB batch losses, each at a freshly drawn beta and minibatch."""
    if T < 1:
        raise ValueError("T must be >= 1")
    betas = sample_betas(rng, T, beta_range, sampling)
    parts = []
    for beta in betas:
        x, y = next_batch()
        parts.append(vib_batch_loss(model, x, y, beta, channel, rng, L=L, noise=noise))
    loss = parts[0].loss
    for p in parts[1:]:
        loss = dc.add(loss, p.loss)
    if T > 1:
        loss = dc.div(loss, float(T))
    return HyperStepLoss(loss, parts)
