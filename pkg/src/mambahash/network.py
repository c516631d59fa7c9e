"""MambaHash backbone: stem, four Mamba stages, AFEM head and tanh hash layer."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import MambaBlock
from .errors import ConfigError, ContractError, ShapeError
from .nn import ACTIVATIONS, Conv2d, DepthwiseConv2d, LayerNorm, Linear, Module
from .ssm import DISCRETIZATIONS

# CIAM kernel per hash length
DEFAULT_CIAM_KERNELS = {16: 3, 32: 3, 48: 5, 64: 5}


def default_ciam_kernel(bits: int) -> int:
    if bits in DEFAULT_CIAM_KERNELS:
        return DEFAULT_CIAM_KERNELS[bits]
    return 3 if bits <= 32 else 5


@dataclass
class ModelConfig:
    depths: list[int] = field(default_factory=lambda: [3, 4, 16, 3])
    dims: list[int] = field(default_factory=lambda: [64, 128, 348, 512])
    hash_bits: int = 64
    ciam_kernel: int | None = None
    ratio_mu: float = 1.0 / 16.0
    ratio_b: float = 0.0
    eta: float = 0.05
    n_state: int = 16
    ffn_ratio: int = 4
    discretization: str = "zoh"
    stem_channels: int = 64
    vsss_act: str = "silu"

    def __post_init__(self):
        self.depths = [int(d) for d in self.depths]
        self.dims = [int(d) for d in self.dims]
        if self.ciam_kernel is None:
            self.ciam_kernel = default_ciam_kernel(self.hash_bits)
        self.validate()

    @classmethod
    def tiny(cls, hash_bits: int = 16, **overrides) -> "ModelConfig":
        """Desk-scale configuration used by tests and the synthetic runs."""
        base = dict(depths=[1, 1, 2, 1], dims=[8, 16, 24, 32], hash_bits=hash_bits)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        if len(self.depths) != 4 or len(self.dims) != 4:
            raise ConfigError("depths and dims must each list exactly 4 stages")
        if any(d < 1 for d in self.depths):
            raise ConfigError(f"every stage depth must be >= 1, got {self.depths}")
        if any(d < 4 or d % 4 for d in self.dims):
            raise ConfigError(f"every stage width must be a positive multiple of 4, got {self.dims}")
        if self.hash_bits < 1:
            raise ConfigError(f"hash_bits must be >= 1, got {self.hash_bits}")
        if self.ciam_kernel < 1 or self.ciam_kernel % 2 == 0:
            raise ConfigError(f"ciam_kernel must be odd and >= 1, got {self.ciam_kernel}")
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.discretization not in DISCRETIZATIONS:
            raise ConfigError(f"discretization must be one of {DISCRETIZATIONS}")
        if self.vsss_act not in ACTIVATIONS:
            raise ConfigError(f"unknown vsss_act {self.vsss_act!r}")
        if self.n_state < 1 or self.ffn_ratio < 1 or self.stem_channels < 1:
            raise ConfigError("n_state, ffn_ratio and stem_channels must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def enhancement_ratio(bits: int, mu: float = 1.0 / 16.0, b: float = 0.0) -> float:
    """Channel expansion factor ``2 ** (mu * bits + b)`` for a given hash length."""
    return 2.0 ** (mu * bits + b)


def expanded_width(dim: int, ratio: float) -> int:
    return max(1, int(math.floor(ratio * dim + 0.5)))


def stage_sides(image_side: int) -> list[int]:
    """Spatial side length each stage runs at for a square input."""
    if image_side % 4:
        raise ConfigError(f"input side {image_side} is not divisible by 4")
    return [image_side // 4 // (2**i) for i in range(4)]


class Stem(Module):
    """7x7/2 conv -> two 3x3 convs -> 3x3/2 conv, ReLU after each; side shrinks 4x."""

    def __init__(self, out_dim: int, rng: np.random.Generator, width: int = 64, dtype=np.float64):
        self.convs = [
            Conv2d(3, width, 7, rng, stride=2, dtype=dtype),
            Conv2d(width, width, 3, rng, dtype=dtype),
            Conv2d(width, width, 3, rng, dtype=dtype),
            Conv2d(width, out_dim, 3, rng, stride=2, dtype=dtype),
        ]

    def forward(self, image: Tensor) -> Tensor:
        if image.ndim != 4 or image.shape[-1] != 3:
            raise ShapeError(f"stem: expected (B, S, S, 3) images, got {image.shape}")
        if image.shape[1] % 4 or image.shape[2] % 4:
            raise ConfigError(f"stem: image side {image.shape[1:3]} is not divisible by 4")
        x = image
        for conv in self.convs:
            x = ad.relu(conv(x))
        return x


class Downsample(Module):
    """3x3 stride-2 conv changing width, then LayerNorm."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float64):
        self.conv = Conv2d(c_in, c_out, 3, rng, stride=2, dtype=dtype)
        self.norm = LayerNorm(c_out, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] % 2 or x.shape[2] % 2:
            raise ContractError(f"downsample: spatial size {x.shape[1:3]} must be even")
        return self.norm(self.conv(x))


class AFEM(Module):
    """Adaptive feature enhancement.

    1x1 expand to ``round(ratio * dim)`` channels, sum of depth-wise 1x1/3x3/5x5
    branches, ReLU, 1x1 back to ``dim``.
    """

    def __init__(self, dim: int, ratio: float, rng: np.random.Generator, dtype=np.float64):
        self.inner = expanded_width(dim, ratio)
        self.expand = Conv2d(dim, self.inner, 1, rng, dtype=dtype)
        self.branches = [DepthwiseConv2d(self.inner, k, rng, dtype=dtype) for k in (1, 3, 5)]
        self.restore = Conv2d(self.inner, dim, 1, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        xf = self.expand(x)
        mixed = self.branches[0](xf) + self.branches[1](xf) + self.branches[2](xf)
        return self.restore(ad.relu(mixed))


class MambaHash(Module):
    """Images (B, S, S, 3) -> continuous hash codes (B, K) in (-1, 1)."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float64):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.stem = Stem(c.dims[0], rng, width=c.stem_channels, dtype=dtype)
        self.stages = []
        self.downsamples = []
        for i, (depth, dim) in enumerate(zip(c.depths, c.dims)):
            self.stages.append(
                [
                    MambaBlock(dim, c.ciam_kernel, rng, n_state=c.n_state, ffn_ratio=c.ffn_ratio,
                               discretization=c.discretization, act=c.vsss_act, dtype=dtype)
                    for _ in range(depth)
                ]
            )
            if i < 3:
                self.downsamples.append(Downsample(dim, c.dims[i + 1], rng, dtype=dtype))
        self.ratio = enhancement_ratio(c.hash_bits, c.ratio_mu, c.ratio_b)
        self.afem = AFEM(c.dims[3], self.ratio, rng, dtype=dtype)
        self.hash_layer = Linear(c.dims[3], c.hash_bits, rng, dtype=dtype)

    def named_parameters(self, prefix: str = ""):
        yield from self.stem.named_parameters(prefix + "stem.")
        for i, blocks in enumerate(self.stages):
            for j, block in enumerate(blocks):
                yield from block.named_parameters(f"{prefix}stages.{i}.{j}.")
            if i < 3:
                yield from self.downsamples[i].named_parameters(f"{prefix}downsamples.{i}.")
        yield from self.afem.named_parameters(prefix + "afem.")
        yield from self.hash_layer.named_parameters(prefix + "hash_layer.")

    def features(self, image: Tensor) -> Tensor:
        """Backbone + AFEM output, (B, H/32, W/32, dims[3])."""
        x = self.stem(image)
        sides = stage_sides(image.shape[1])
        for i, blocks in enumerate(self.stages):
            b, h, w, d = x.shape
            if (h, w) != (sides[i], image.shape[2] // 4 // 2**i):
                raise ShapeError(f"stage {i} runs at {h}x{w}, expected side {sides[i]}")
            seq = ad.reshape(x, (b, h * w, d))
            for block in blocks:
                seq = block(seq, (h, w))
            x = ad.reshape(seq, (b, h, w, d))
            if i < 3:
                x = self.downsamples[i](x)
        return self.afem(x)

    def forward(self, image) -> Tensor:
        x = self.features(ad.as_tensor(image))
        pooled = ad.mean(x, axis=(1, 2))
        return ad.tanh(self.hash_layer(pooled))

    def encode(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Continuous codes for a stack of images, without recording a tape."""
        dtype = self.hash_layer.weight.dtype
        out = []
        with ad.no_grad():
            for start in range(0, len(images), batch_size):
                chunk = np.asarray(images[start : start + batch_size], dtype=dtype)
                out.append(self.forward(Tensor(chunk)).data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.config.hash_bits))
