"""Finite-difference checks of every differentiable building block.

Each case draws random inputs and parameters, wraps the block in a scalar
function and compares reverse-mode gradients with central differences.
Stochastic parts use a fixed noise realization per evaluation.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import diffcore as dc
from .diffcore import RandomStream, Tensor, grad_check
from .hyperlayers import ACTIVATIONS, Architecture, BetaAdjustedConv, BetaAdjustedDense, DenseSpec
from .objective import distortion, kl_to_standard_prior, vib_batch_loss
from .pipeline import Channel, Decoder, Encoder, GaussianCode, SplitModel

CASES = ("dense", "adjusted-dense", "adjusted-conv", "encoder-heads", "cross-entropy",
         "squared-error", "kl", "vib-loss")


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    """A scalar with a generic (non-symmetric) dependence on every output entry."""
    return dc.sum(dc.mul(out, Tensor(weights)))


def _bind(layer, inputs: dict[str, Tensor], prefix: str = "") -> None:
    for name in layer.parameters():
        setattr(layer, name, inputs[prefix + name])


def _point(layer, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: t.data.copy() for k, t in layer.parameters().items()}


def _perturb(point: dict[str, np.ndarray], rng: RandomStream, beta: float,
             scale: float = 0.5) -> dict[str, np.ndarray]:
    """Spread the parameters so the check is generic.

    u multiplies ln(beta), so its spread is divided by |ln beta| to keep the
    gates away from saturation, where gradients fall below the
    finite-difference resolution.
    """
    gate_scale = scale / max(1.0, abs(math.log(beta)))
    out = {}
    for k, v in point.items():
        leaf = k.rsplit(".", 1)[-1]
        out[k] = v + (gate_scale if leaf in ("u", "u1", "u2") else scale) * rng.normal(v.shape)
    return out


def _dense_case(rng: RandomStream, i: int, adjusted: bool) -> float:
    s_init, s_x, s_w = rng.split(3)
    d_in, d_out = 2 + i % 3, 1 + i % 4
    act = ACTIVATIONS[i % len(ACTIVATIONS)]
    layer = BetaAdjustedDense(d_in, d_out, s_init, activation=act, adjusted=adjusted)
    beta = float(10.0 ** s_x.uniform(-4, 1))
    weights = s_w.normal((3, d_out))
    point = _perturb(_point(layer), s_w, beta)
    point["x"] = s_x.normal((3, d_in))

    def f(inp):
        _bind(layer, inp)
        return _weighted_sum(layer(inp["x"], beta), weights)

    return grad_check(f, point)


def _conv_case(rng: RandomStream, i: int) -> float:
    s_init, s_x, s_w = rng.split(3)
    c_in, c_out, k = 1 + i % 2, 1 + i % 3, 2 + i % 2
    layer = BetaAdjustedConv(c_in, c_out, k, s_init, activation=("tanh", "identity")[i % 2], padding=i % 2)
    beta = float(10.0 ** s_x.uniform(-4, 1))
    x = s_x.normal((2, c_in, 4, 4))
    out_hw = 4 + 2 * (i % 2) - k + 1
    weights = s_w.normal((2, c_out, out_hw, out_hw))
    point = _perturb(_point(layer), s_w, beta)
    point["x"] = x

    def f(inp):
        _bind(layer, inp)
        return _weighted_sum(layer(inp["x"], beta), weights)

    return grad_check(f, point)


def _encoder_case(rng: RandomStream, i: int) -> float:
    s_init, s_x, s_w = rng.split(3)
    n, d = 3, 2
    enc = Encoder(n, d, Architecture([DenseSpec(n, 4, "tanh")]), s_init)
    beta = float(10.0 ** s_x.uniform(-4, 1))
    x = s_x.normal((3, n))
    w_mu, w_theta = s_w.normal((3, d)), s_w.normal((3, d))
    point = {}
    for prefix, layer in (("mu.", enc.mu_head), ("theta.", enc.theta_head)):
        point.update(_perturb(_point(layer, prefix), s_w, beta))

    def f(inp):
        _bind(enc.mu_head, inp, "mu.")
        _bind(enc.theta_head, inp, "theta.")
        code = enc.code(x, beta)
        return dc.add(_weighted_sum(code.mu, w_mu), _weighted_sum(code.theta, w_theta))

    return grad_check(f, point)


def _ce_case(rng: RandomStream, i: int) -> float:
    k = 2 + i % 4
    logits = 2.0 * rng.normal((4, k))
    labels = rng.integers(0, k, size=4)
    return grad_check(lambda inp: dc.sum(distortion(inp["logits"], labels, "cross-entropy")),
                      {"logits": logits})


def _se_case(rng: RandomStream, i: int) -> float:
    width = 1 + i % 3
    pred, target = rng.normal((4, width)), rng.normal((4, width))
    return grad_check(lambda inp: dc.sum(distortion(inp["pred"], target, "squared-error")),
                      {"pred": pred})


def _kl_case(rng: RandomStream, i: int) -> float:
    d = 1 + i % 4
    mu = rng.normal((3, d))
    theta = 0.2 + np.abs(rng.normal((3, d)))
    sigma2 = float(rng.uniform(0.0, 1.0))

    def f(inp):
        return dc.sum(kl_to_standard_prior(GaussianCode(inp["mu"], inp["theta"]), sigma2))

    return grad_check(f, {"mu": mu, "theta": theta})


def _slots(model: SplitModel):
    layers = []
    if model.encoder.body is not None:
        layers += [(f"enc.body.{j}.", l) for j, l in enumerate(model.encoder.body)]
    layers.append(("enc.mu.", model.encoder.mu_head))
    if model.encoder.theta_head is not None:
        layers.append(("enc.theta.", model.encoder.theta_head))
    layers += [(f"dec.{j}.", l) for j, l in enumerate(model.decoder.stack)]
    return layers


def _vib_case(rng: RandomStream, i: int) -> float:
    s_init, s_x, s_w = rng.split(3)
    n, d, k = 3, 2, 3
    # gates start near 0.9 so stacked scales do not shrink gradients towards
    # the finite-difference noise floor
    enc = Encoder(n, d, Architecture([DenseSpec(n, 4, "tanh")]), s_init, v_init=2.0)
    dec = Decoder(Architecture([DenseSpec(d, 3, "tanh"), DenseSpec(3, k, "identity")]), s_init, v_init=2.0)
    model = SplitModel(enc, dec, "classification")
    x = s_x.normal((4, n))
    y = s_x.integers(0, k, size=4)
    beta = float(10.0 ** s_x.uniform(-4, 1))
    channel = Channel(float(s_x.uniform(0.01, 0.5)))
    noise_seed = int(s_x.integers(0, 2**31))
    point = {}
    for prefix, layer in _slots(model):
        point.update(_perturb(_point(layer, prefix), s_w, beta))

    def f(inp):
        for prefix, layer in _slots(model):
            _bind(layer, inp, prefix)
        # same noise draw at every evaluation
        return vib_batch_loss(model, x, y, beta, channel, RandomStream(noise_seed)).loss

    return grad_check(f, point)


_RUNNERS: dict[str, Callable[[RandomStream, int], float]] = {
    "dense": lambda r, i: _dense_case(r, i, adjusted=False),
    "adjusted-dense": lambda r, i: _dense_case(r, i, adjusted=True),
    "adjusted-conv": _conv_case,
    "encoder-heads": _encoder_case,
    "cross-entropy": _ce_case,
    "squared-error": _se_case,
    "kl": _kl_case,
    "vib-loss": _vib_case,
}


def gradient_suite(seed: int = 0, points: int = 20, cases=CASES) -> dict[str, float]:
    """Worst relative gradient error per case over ``points`` random draws."""
    unknown = set(cases) - set(_RUNNERS)
    if unknown:
        raise ValueError(f"unknown gradient cases {sorted(unknown)}")
    streams = RandomStream(seed).split(len(CASES))
    worst = {}
    for name, stream in zip(CASES, streams):
        if name not in cases:
            continue
        per_point = stream.split(points)
        worst[name] = max(_RUNNERS[name](per_point[i], i) for i in range(points))
    return worst
