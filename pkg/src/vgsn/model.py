"""Variational grid setting network and its baseline VAE.

The network maps a glyph image to a latent mean/log-scale pair, samples a code
``z = mu + exp(sigma) * phi(eps)`` with ``phi`` the standard normal density,
expands ``z`` into one latent per grid partition, decodes every partition with
a shared transposed-convolution stack, lays the tiles out edge to edge and
merges them with a single-channel stride-1 transposed convolution followed by a
sigmoid.

The baseline VAE is the same pipeline without the grid expansion: ``z`` seeds
one decoder pass over the whole image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import tensor as T
from .layers import (
    BatchNormParams,
    ConvParams,
    DenseParams,
    batchnorm,
    conv2d,
    conv_transpose2d,
    dense,
    he_normal,
    relu,
    sigmoid,
)
from .tensor import Rng, Tensor

__all__ = [
    "ConfigError",
    "GridSpec",
    "LatentStats",
    "ModelConfig",
    "VgsnParams",
    "assemble_and_combine",
    "assemble_tiles",
    "decode_tiles",
    "default_config",
    "encode",
    "forward",
    "grid_expand",
    "init_params",
    "sample_latent",
    "split_tiles",
    "vae_forward",
    "vgsn_forward",
]

ENCODER_CHANNELS = (16, 32, 64, 128, 128, 128)
DECODER_CHANNELS = (128, 64, 32, 16, 8)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ConfigError(ValueError):
    """Inconsistent model geometry."""


@dataclass(frozen=True)
class GridSpec:
    g: int = 4
    partition_latent_dim: int = 16

    def __post_init__(self):
        if self.g < 1 or self.partition_latent_dim < 1:
            raise ConfigError(f"invalid grid {self.g} / partition latent {self.partition_latent_dim}")


@dataclass(frozen=True)
class ModelConfig:
    """Geometry of a VGSN (``kind="vgsn"``) or baseline VAE (``kind="vae"``).

    Channel tuples default to the trailing/leading slices of the reference
    stacks ``ENCODER_CHANNELS`` and ``DECODER_CHANNELS`` when left empty.
    """

    image_size: int = 256
    encoder_depth: int = 6
    decoder_stages: int = 5
    latent_dim: int = 64
    basis_dim: int = 512
    grid: GridSpec = field(default_factory=GridSpec)
    encoder_channels: tuple[int, ...] = ()
    decoder_channels: tuple[int, ...] = ()
    kernel_size: int = 3
    combine_kernel: int = 3
    kind: str = "vgsn"
    bn_momentum: float = 0.9
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        if not self.encoder_channels:
            chans = ENCODER_CHANNELS + (ENCODER_CHANNELS[-1],) * max(self.encoder_depth - 6, 0)
            object.__setattr__(self, "encoder_channels", tuple(chans[: self.encoder_depth]))
        if not self.decoder_channels:
            chans = (DECODER_CHANNELS[0],) * max(self.decoder_stages - 5, 0) + DECODER_CHANNELS
            object.__setattr__(self, "decoder_channels", tuple(chans[len(chans) - self.decoder_stages :]))
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "decoder_channels", tuple(int(c) for c in self.decoder_channels))
        self.validate()

    def validate(self) -> None:
        n = self.image_size
        if self.kind not in ("vgsn", "vae"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if n < 1 or self.encoder_depth < 1 or self.decoder_stages < 0:
            raise ConfigError("image size and encoder depth must be positive")
        if max(self.encoder_depth, self.decoder_stages) > 30:
            raise ConfigError("encoder depth and decoder stages are limited to 30")
        if min(self.latent_dim, self.basis_dim, self.kernel_size, self.combine_kernel) < 1:
            raise ConfigError("latent/basis widths and kernel sizes must be positive")
        if len(self.encoder_channels) != self.encoder_depth:
            raise ConfigError("encoder_channels length must equal encoder_depth")
        if len(self.decoder_channels) != self.decoder_stages or self.decoder_stages == 0:
            raise ConfigError("decoder_channels length must equal decoder_stages (>= 1)")
        if min(self.encoder_channels + self.decoder_channels) < 1:
            raise ConfigError("channel counts must be positive")
        if n % (2**self.encoder_depth):
            raise ConfigError(f"image size {n} not divisible by 2^{self.encoder_depth} (encoder depth)")
        g = self.grid.g if self.kind == "vgsn" else 1
        if n % (g * 2**self.decoder_stages):
            raise ConfigError(
                f"image size {n} not divisible by grid {g} x 2^{self.decoder_stages} (decoder stages)"
            )
        if not 0.0 < self.bn_momentum < 1.0 or not 0.0 < self.bn_epsilon < math.inf:
            raise ConfigError("batchnorm momentum must be in (0,1) and epsilon > 0")

    @property
    def tile_size(self) -> int:
        return self.image_size // (self.grid.g if self.kind == "vgsn" else 1)

    @property
    def seed_size(self) -> int:
        return self.tile_size // 2**self.decoder_stages

    @property
    def encoded_size(self) -> int:
        return self.image_size // 2**self.encoder_depth

    def as_vae(self) -> "ModelConfig":
        return replace(self, kind="vae")

    def state_size(self) -> int:
        """Number of stored values (parameters plus batchnorm buffers)."""
        k2 = self.kernel_size**2
        total = 0
        cin = 1
        for cout in self.encoder_channels:
            total += k2 * cin * cout + cout + 4 * cout
            cin = cout
        flat = self.encoded_size**2 * cin
        total += flat * self.basis_dim + self.basis_dim
        total += 2 * (self.basis_dim * self.latent_dim + self.latent_dim)
        if self.kind == "vgsn":
            width = self.grid.g**2 * self.grid.partition_latent_dim
            total += self.latent_dim * width + width
            seed_in = self.grid.partition_latent_dim
        else:
            seed_in = self.latent_dim
        c0 = self.decoder_channels[0]
        seed_out = self.seed_size**2 * c0
        total += seed_in * seed_out + seed_out
        cin = c0
        for cout in self.decoder_channels:
            total += k2 * cin * cout + cout + 4 * cout
            cin = cout
        return total + self.combine_kernel**2 * cin + 1


def default_config(image_size: int, grid: int = 4, kind: str = "vgsn", stages: int | None = None, **kw) -> ModelConfig:
    """Config scaled to ``image_size``.

    Encoder depth is ``min(6, log2(image_size))`` and decoder stages default to
    ``min(5, log2(image_size / grid))``, which gives the reference 6/5 layer
    counts at 256 pixels.
    """
    if image_size < 1 or grid < 1 or image_size % grid:
        raise ConfigError(f"image size {image_size} is not divisible by grid {grid}")
    depth = min(6, int(math.log2(image_size)))
    if stages is None:
        stages = min(5, int(math.log2(image_size // grid)))
    return ModelConfig(
        image_size=image_size,
        encoder_depth=depth,
        decoder_stages=stages,
        grid=GridSpec(grid, kw.pop("partition_latent_dim", 16)),
        kind=kind,
        **kw,
    )


@dataclass
class LatentStats:
    mu: Tensor
    sigma: Tensor


@dataclass
class VgsnParams:
    config: ModelConfig
    encoder: list[tuple[ConvParams, BatchNormParams]]
    basis: DenseParams
    head_mu: DenseParams
    head_sigma: DenseParams
    grid_dense: DenseParams | None
    decoder_seed: DenseParams
    decoder: list[tuple[ConvParams, BatchNormParams]]
    combine: ConvParams

    def __post_init__(self):
        for name, t in self.named_parameters():
            t.requires_grad = True
            t.name = name
        for name, t in self.named_buffers():
            t.name = name

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        """Trainable tensors in the frozen serialization order."""
        for i, (conv, bn) in enumerate(self.encoder):
            yield f"encoder.{i}.kernel", conv.kernel
            yield f"encoder.{i}.bias", conv.bias
            yield f"encoder.{i}.gamma", bn.gamma
            yield f"encoder.{i}.beta", bn.beta
        for label in ("basis", "head_mu", "head_sigma", "grid_dense", "decoder_seed"):
            layer = getattr(self, label)
            if layer is not None:
                yield f"{label}.weight", layer.weight
                yield f"{label}.bias", layer.bias
        for i, (conv, bn) in enumerate(self.decoder):
            yield f"decoder.{i}.kernel", conv.kernel
            yield f"decoder.{i}.bias", conv.bias
            yield f"decoder.{i}.gamma", bn.gamma
            yield f"decoder.{i}.beta", bn.beta
        yield "combine.kernel", self.combine.kernel
        yield "combine.bias", self.combine.bias

    def named_buffers(self) -> Iterator[tuple[str, Tensor]]:
        for prefix, stack in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i, (_, bn) in enumerate(stack):
                yield f"{prefix}.{i}.running_mean", bn.running_mean
                yield f"{prefix}.{i}.running_var", bn.running_var

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state(self) -> list[tuple[str, Tensor]]:
        return list(self.named_parameters()) + list(self.named_buffers())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def astype(self, dtype) -> "VgsnParams":
        """Cast every stored array in place; returns self."""
        for _, t in self.state():
            t.data = t.data.astype(dtype)
        return self


def _conv(shape, stride, rng, padding="same") -> ConvParams:
    kh, kw, cin, cout = shape
    kernel = Tensor(he_normal(shape, kh * kw * cin, rng))
    return ConvParams(kernel, Tensor(np.zeros(cout)), stride=stride, padding=padding)


def _dense(n_in, n_out, rng) -> DenseParams:
    return DenseParams(Tensor(he_normal((n_in, n_out), n_in, rng)), Tensor(np.zeros(n_out)))


def init_params(config: ModelConfig, rng: Rng | int) -> VgsnParams:
    """Scaled-normal weights (std ``sqrt(2 / fan_in)``), zero biases, unit BN scale."""
    config.validate()
    if not isinstance(rng, Rng):
        rng = Rng(rng)
    k = config.kernel_size
    bn = dict(momentum=config.bn_momentum, epsilon=config.bn_epsilon)
    encoder = []
    cin = 1
    for cout in config.encoder_channels:
        encoder.append((_conv((k, k, cin, cout), 2, rng), BatchNormParams.fresh(cout, **bn)))
        cin = cout
    flat = config.encoded_size**2 * cin
    basis = _dense(flat, config.basis_dim, rng)
    head_mu = _dense(config.basis_dim, config.latent_dim, rng)
    head_sigma = _dense(config.basis_dim, config.latent_dim, rng)
    if config.kind == "vgsn":
        g, dp = config.grid.g, config.grid.partition_latent_dim
        grid_dense = _dense(config.latent_dim, g * g * dp, rng)
        seed_in = dp
    else:
        grid_dense = None
        seed_in = config.latent_dim
    c0 = config.decoder_channels[0]
    decoder_seed = _dense(seed_in, config.seed_size**2 * c0, rng)
    decoder = []
    cin = c0
    for cout in config.decoder_channels:
        decoder.append((_conv((k, k, cin, cout), 2, rng), BatchNormParams.fresh(cout, **bn)))
        cin = cout
    kc = config.combine_kernel
    combine = _conv((kc, kc, cin, 1), 1, rng)
    return VgsnParams(config, encoder, basis, head_mu, head_sigma, grid_dense, decoder_seed, decoder, combine)


def _check_batch(params: VgsnParams, batch: Tensor) -> None:
    n = params.config.image_size
    if batch.data.ndim != 4 or batch.shape[1:] != (n, n, 1):
        raise ConfigError(f"batch shape {batch.shape} does not match model input (B, {n}, {n}, 1)")


def encode(params: VgsnParams, batch: Tensor, mode: str = "train") -> LatentStats:
    _check_batch(params, batch)
    h = batch
    for conv, bn in params.encoder:
        h = relu(batchnorm(conv2d(h, conv), bn, mode))
    h = T.reshape(h, (h.shape[0], -1))
    h = relu(dense(h, params.basis))
    return LatentStats(dense(h, params.head_mu), dense(h, params.head_sigma))


def gaussian_density(x: np.ndarray) -> np.ndarray:
    return INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def sample_latent(stats: LatentStats, eps: Tensor | np.ndarray | None) -> Tensor:
    """``mu + exp(sigma) * phi(eps)``; ``eps=None`` returns ``mu`` (inference)."""
    if eps is None:
        return stats.mu
    eps = eps.data if isinstance(eps, Tensor) else np.asarray(eps)
    if stats.mu.shape != stats.sigma.shape or eps.shape != stats.mu.shape:
        raise ValueError(f"shape mismatch mu {stats.mu.shape}, sigma {stats.sigma.shape}, eps {eps.shape}")
    return stats.mu + T.exp(stats.sigma) * Tensor(gaussian_density(eps))


def grid_expand(params: VgsnParams, z: Tensor, grid: GridSpec | None = None) -> Tensor:
    grid = grid or params.config.grid
    g, dp = grid.g, grid.partition_latent_dim
    if params.grid_dense is None or params.grid_dense.weight.shape[1] != g * g * dp:
        raise ConfigError(f"grid dense layer does not produce {g}x{g}x{dp} partition latents")
    return T.reshape(dense(z, params.grid_dense), (z.shape[0], g, g, dp))


def _decode(params: VgsnParams, seeds: Tensor, mode: str) -> Tensor:
    cfg = params.config
    s0, c0 = cfg.seed_size, cfg.decoder_channels[0]
    h = T.reshape(dense(seeds, params.decoder_seed), (seeds.shape[0], s0, s0, c0))
    for conv, bn in params.decoder:
        h = relu(batchnorm(conv_transpose2d(h, conv), bn, mode))
    return h


def decode_tiles(params: VgsnParams, tiles: Tensor, mode: str = "train") -> Tensor:
    """Decode every partition latent with the shared decoder: ``(B, g, g, t, t, c)``."""
    b, g, g2, dp = tiles.shape
    if g != g2:
        raise ConfigError("tile grid must be square")
    cfg = params.config
    if cfg.seed_size < 1 or cfg.seed_size * 2**cfg.decoder_stages * g != cfg.image_size:
        raise ConfigError(f"{g}x{g} grid does not divide image size {cfg.image_size} into decodable tiles")
    h = _decode(params, T.reshape(tiles, (b * g * g, dp)), mode)
    t, c = h.shape[1], h.shape[3]
    return T.reshape(h, (b, g, g, t, t, c))


def assemble_tiles(tiles: Tensor) -> Tensor:
    """Lay ``(B, g, g, t, t, c)`` tiles out row-major into ``(B, g*t, g*t, c)``."""
    b, g, _, t, _, c = tiles.shape
    return T.reshape(T.transpose(tiles, (0, 1, 3, 2, 4, 5)), (b, g * t, g * t, c))


def split_tiles(image: Tensor, g: int) -> Tensor:
    """Inverse of :func:`assemble_tiles`."""
    b, h, w, c = image.shape
    if h != w or h % g:
        raise ConfigError(f"image {h}x{w} cannot be split into a {g}x{g} grid")
    t = h // g
    return T.transpose(T.reshape(image, (b, g, t, g, t, c)), (0, 1, 3, 2, 4, 5))


def combine(params: VgsnParams, image: Tensor) -> Tensor:
    return sigmoid(conv_transpose2d(image, params.combine))


def assemble_and_combine(params: VgsnParams, tiles: Tensor) -> Tensor:
    _, g, _, t, _, _ = tiles.shape
    if g * t != params.config.image_size:
        raise ConfigError(f"{g} tiles of {t} pixels do not cover image size {params.config.image_size}")
    return combine(params, assemble_tiles(tiles))


def vgsn_forward(params: VgsnParams, batch: Tensor, eps=None, mode: str = "train") -> Tensor:
    stats = encode(params, batch, mode)
    z = sample_latent(stats, eps)
    tiles = decode_tiles(params, grid_expand(params, z), mode)
    return assemble_and_combine(params, tiles)


def vae_forward(params: VgsnParams, batch: Tensor, eps=None, mode: str = "train") -> Tensor:
    stats = encode(params, batch, mode)
    z = sample_latent(stats, eps)
    return combine(params, _decode(params, z, mode))


def forward(params: VgsnParams, batch: Tensor, eps=None, mode: str = "train", return_stats: bool = False):
    """Dispatch on ``params.config.kind``; optionally also return the latent stats."""
    stats = encode(params, batch, mode)
    z = sample_latent(stats, eps)
    if params.config.kind == "vgsn":
        out = assemble_and_combine(params, decode_tiles(params, grid_expand(params, z), mode))
    else:
        out = combine(params, _decode(params, z, mode))
    return (out, stats) if return_stats else out
