"""Device encoder, AWGN channel and network decoder: x -> z -> z_hat -> y_hat.

The decoder never sees x or z and the channel never sees x; the call
signatures below carry only what each stage is allowed to read.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import RandomStream, Tensor
from .hyperlayers import Architecture, BetaAdjustedDense, DenseSpec, LayerStack, parameter_count

THETA_MIN = 1e-6
TASK_KINDS = ("classification", "regression")


@dataclass
class GaussianCode:
    """Per-sample mean and standard deviation of p(z|x); both are (M, d)."""

    mu: Tensor
    theta: Tensor
    deterministic: bool = False

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]


@dataclass(frozen=True)
class Channel:
    sigma2: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma2) and self.sigma2 >= 0):
            raise ValueError(f"channel noise variance must be finite and >= 0, got {self.sigma2}")

    @classmethod
    def from_snr_db(cls, snr_db: float) -> "Channel":
        return cls(snr_to_noise_variance(snr_db))


def snr_to_noise_variance(snr_db: float) -> float:
    """Noise variance for unit per-dimension signal power."""
    snr_db = float(snr_db)
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    return 10.0 ** (-snr_db / 10.0)


class Encoder:
    """Body stack followed by a mean head and (in stochastic mode) a std head.

    The std head output goes through softplus and is floored at THETA_MIN.
    Deterministic mode has no std head and returns z = mu.
    """

    def __init__(self, input_dim: int, feature_dim: int, body: Architecture | None = None,
                 rng: RandomStream | None = None, adjusted: bool = True, adjust_heads: bool = True,
                 mode: str = "stochastic", head_bias: bool = True, v_init: float = 0.0,
                 theta_min: float = THETA_MIN):
        if mode not in ("stochastic", "deterministic"):
            raise ValueError(f"unknown encoder mode {mode!r}")
        rng = rng or RandomStream(0)
        body_rng, mu_rng, theta_rng = rng.split(3)
        self.input_dim = input_dim
        self.feature_dim = feature_dim
        self.mode = mode
        self.theta_min = theta_min
        self.body = LayerStack.build(body, body_rng, adjusted=adjusted, v_init=v_init) if body else None
        width = body.output_width if body else input_dim
        if body and body.layers and isinstance(body.layers[0], DenseSpec) and body.layers[0].in_features != input_dim:
            raise ValueError(f"encoder body expects {body.layers[0].in_features} inputs, encoder has {input_dim}")
        head_adjusted = adjusted and adjust_heads
        self.mu_head = BetaAdjustedDense(width, feature_dim, mu_rng, bias=head_bias,
                                         adjusted=head_adjusted, v_init=v_init)
        self.theta_head = None
        if mode == "stochastic":
            self.theta_head = BetaAdjustedDense(width, feature_dim, theta_rng, bias=head_bias,
                                                adjusted=head_adjusted, v_init=v_init)

    @property
    def deterministic(self) -> bool:
        return self.mode == "deterministic"

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        if self.body is not None:
            params.update({f"body.{k}": t for k, t in self.body.parameters().items()})
        params.update({f"mu.{k}": t for k, t in self.mu_head.parameters().items()})
        if self.theta_head is not None:
            params.update({f"theta.{k}": t for k, t in self.theta_head.parameters().items()})
        return params

    def features(self, x: Tensor, beta: float) -> Tensor:
        h = dc.as_tensor(x)
        if self.body is None:
            return h
        shape = self.body.arch.input_shape
        if shape is not None and h.ndim == 2:
            h = dc.reshape(h, (h.shape[0], *shape))
        return self.body(h, beta)

    def code(self, x: Tensor, beta: float) -> GaussianCode:
        h = self.features(x, beta)
        mu = self.mu_head(h, beta)
        if self.theta_head is None:
            return GaussianCode(mu, Tensor(np.zeros(mu.shape)), deterministic=True)
        theta = dc.maximum(dc.softplus(self.theta_head(h, beta)), self.theta_min)
        return GaussianCode(mu, theta)


def encode(encoder: Encoder, x, beta: float, rng: RandomStream) -> tuple[GaussianCode, Tensor]:
    """Gaussian code for x and a reparameterized draw z = mu + theta * eta."""
    code = encoder.code(x, beta)
    if code.deterministic:
        return code, code.mu
    eta = Tensor(rng.normal(code.mu.shape))
    return code, dc.add(code.mu, dc.mul(code.theta, eta))


def transmit(z: Tensor, channel: Channel, rng: RandomStream) -> Tensor:
    """z plus white Gaussian noise of variance ``channel.sigma2``."""
    if channel.sigma2 == 0:
        return z
    noise = rng.normal(z.shape, scale=math.sqrt(channel.sigma2))
    return dc.add(z, Tensor(noise))


class Decoder:
    def __init__(self, arch: Architecture, rng: RandomStream | None = None, adjusted: bool = True,
                 v_init: float = 0.0):
        self.arch = arch
        self.stack = LayerStack.build(arch, rng or RandomStream(0), adjusted=adjusted, v_init=v_init)
        self.frozen = False

    @classmethod
    def linear(cls, B) -> "Decoder":
        """Fixed, unadjusted linear readout y_hat = B^T z_hat."""
        B = np.asarray(B, dtype=np.float64).reshape(-1)
        dec = cls(Architecture([DenseSpec(B.size, 1, "identity", bias=False)]), adjusted=False)
        dec.stack.layers[0].W.data[...] = B[None, :]
        dec.freeze()
        return dec

    @property
    def input_dim(self) -> int:
        return self.arch.layers[0].in_features

    def freeze(self) -> None:
        self.frozen = True
        self.stack.freeze()

    def is_affine(self) -> bool:
        return all(isinstance(s, DenseSpec) and s.activation == "identity" for s in self.arch.layers)

    def parameters(self) -> dict[str, Tensor]:
        return self.stack.parameters()


def decode(decoder: Decoder, z_hat: Tensor, beta: float) -> Tensor:
    z_hat = dc.as_tensor(z_hat)
    if z_hat.shape[-1] != decoder.input_dim:
        raise dc.ShapeError(f"decoder expects feature width {decoder.input_dim}, got {z_hat.shape}")
    return decoder.stack(z_hat, beta)


class SplitModel:
    """Encoder plus decoder for one task kind; the (hyper)network being trained."""

    def __init__(self, encoder: Encoder, decoder: Decoder, kind: str):
        if kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {kind!r}")
        if decoder.input_dim != encoder.feature_dim:
            raise ValueError("decoder input width must equal the encoder feature dimension")
        self.encoder = encoder
        self.decoder = decoder
        self.kind = kind

    def all_parameters(self) -> dict[str, Tensor]:
        params = {f"enc.{k}": t for k, t in self.encoder.parameters().items()}
        params.update({f"dec.{k}": t for k, t in self.decoder.parameters().items()})
        return params

    def parameters(self) -> dict[str, Tensor]:
        """Trainable parameters only, in a fixed order."""
        return {k: t for k, t in self.all_parameters().items() if t.requires_grad}

    def parameter_count(self) -> int:
        return parameter_count(self.all_parameters())

    def forward(self, x, beta: float, channel: Channel, rng: RandomStream) -> Tensor:
        _, z = encode(self.encoder, x, beta, rng)
        return decode(self.decoder, transmit(z, channel, rng), beta)
