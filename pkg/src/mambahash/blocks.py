"""Grouped four-direction Mamba layer and the residual Mamba block."""

from __future__ import annotations

import enum
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, ShapeError
from .nn import ACTIVATIONS, DepthwiseConv2d, LayerNorm, Linear, Module, _uniform
from .ssm import SS1D


class ScanDirection(enum.Enum):
    LEFT_TO_RIGHT = "l2r"
    RIGHT_TO_LEFT = "r2l"
    TOP_TO_BOTTOM = "t2b"
    BOTTOM_TO_TOP = "b2t"


# channel group g is scanned along GROUP_DIRECTIONS[g]
GROUP_DIRECTIONS = (
    ScanDirection.LEFT_TO_RIGHT,
    ScanDirection.RIGHT_TO_LEFT,
    ScanDirection.TOP_TO_BOTTOM,
    ScanDirection.BOTTOM_TO_TOP,
)


@lru_cache(maxsize=None)
def direction_permutation(h: int, w: int, direction: ScanDirection) -> np.ndarray:
    """Row-major grid positions listed in the order ``direction`` visits them."""
    grid = np.arange(h * w).reshape(h, w)
    if direction is ScanDirection.LEFT_TO_RIGHT:
        perm = grid.ravel()
    elif direction is ScanDirection.RIGHT_TO_LEFT:
        perm = grid.ravel()[::-1]
    elif direction is ScanDirection.TOP_TO_BOTTOM:
        perm = grid.T.ravel()
    else:
        perm = grid.T.ravel()[::-1]
    perm = np.ascontiguousarray(perm)
    perm.setflags(write=False)
    return perm


def to_direction(seq: Tensor, hw: tuple[int, int], direction: ScanDirection) -> Tensor:
    """Reorder a row-major (B, N, C) sequence into ``direction`` scan order."""
    h, w = hw
    if seq.shape[1] != h * w:
        raise ContractError(f"sequence length {seq.shape[1]} does not match grid {h}x{w}")
    return ad.permute_axis(seq, direction_permutation(h, w, direction), axis=1)


def from_direction(seq: Tensor, hw: tuple[int, int], direction: ScanDirection) -> Tensor:
    """Inverse of :func:`to_direction`: back to row-major grid order."""
    h, w = hw
    if seq.shape[1] != h * w:
        raise ContractError(f"sequence length {seq.shape[1]} does not match grid {h}x{w}")
    return ad.permute_axis(seq, np.argsort(direction_permutation(h, w, direction)), axis=1)


def reorder_for_direction(x: Tensor, direction: ScanDirection) -> Tensor:
    """(B, H, W, C) grid -> (B, H*W, C) sequence in ``direction`` order."""
    b, h, w, c = x.shape
    return to_direction(ad.reshape(x, (b, h * w, c)), (h, w), direction)


def restore_from_direction(seq: Tensor, hw: tuple[int, int], direction: ScanDirection) -> Tensor:
    """(B, H*W, C) sequence in ``direction`` order -> (B, H, W, C) grid."""
    h, w = hw
    b, _, c = seq.shape
    return ad.reshape(from_direction(seq, hw, direction), (b, h, w, c))


class VSSSBlock(Module):
    """in-proj -> depth-wise 3x3 conv (grid space) -> act -> SS1D -> LN -> out-proj.

    The sequence arrives in ``direction`` scan order; the depth-wise conv is
    applied after mapping it back onto its (H, W) grid.
    """

    def __init__(self, dim: int, rng: np.random.Generator, n_state: int = 16, discretization: str = "zoh",
                 act: str = "silu", dtype=np.float64):
        if act not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {act!r}")
        self.act = act
        self.in_proj = Linear(dim, dim, rng, dtype=dtype)
        self.dwconv = DepthwiseConv2d(dim, 3, rng, dtype=dtype)
        self.ss1d = SS1D(dim, rng, n_state=n_state, discretization=discretization, dtype=dtype)
        self.norm = LayerNorm(dim, dtype=dtype)
        self.out_proj = Linear(dim, dim, rng, dtype=dtype)

    def forward(self, x_seq: Tensor, hw: tuple[int, int],
                direction: ScanDirection = ScanDirection.LEFT_TO_RIGHT) -> Tensor:
        h, w = hw
        if x_seq.ndim != 3 or x_seq.shape[1] != h * w:
            raise ContractError(f"VSSS block: sequence {x_seq.shape} cannot be laid out on a {h}x{w} grid")
        z = self.in_proj(x_seq)
        grid = self.dwconv(restore_from_direction(z, hw, direction))
        z = ACTIVATIONS[self.act](reorder_for_direction(grid, direction))
        return self.out_proj(self.norm(self.ss1d(z)))


class CIAM(Module):
    """Channel-interaction attention: sigmoid(local 1-D conv + full-width linear) of pooled channels."""

    def __init__(self, dim: int, kernel: int, rng: np.random.Generator, dtype=np.float64):
        if kernel < 1 or kernel % 2 == 0:
            raise ConfigError(f"CIAM kernel size must be odd and >= 1, got {kernel}")
        self.kernel = kernel
        self.conv_weight = _uniform(rng, (kernel,), kernel, dtype)
        self.fc = Linear(dim, dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        pooled = ad.mean(x, axis=1, keepdims=True)  # (B, 1, D)
        local = ad.channel_conv1d(pooled, self.conv_weight)
        return ad.sigmoid(self.fc(pooled) + local)


class MambaGroupLayer(Module):
    """Split channels into four groups, scan each along its own direction,
    re-align, concatenate, gate by CIAM scores, LayerNorm, project."""

    def __init__(self, dim: int, kernel: int, rng: np.random.Generator, n_state: int = 16,
                 discretization: str = "zoh", act: str = "silu", dtype=np.float64):
        if dim % 4:
            raise ConfigError(f"group layer width {dim} is not divisible by 4")
        self.dim = dim
        self.vsss = [
            VSSSBlock(dim // 4, rng, n_state=n_state, discretization=discretization, act=act, dtype=dtype)
            for _ in GROUP_DIRECTIONS
        ]
        self.ciam = CIAM(dim, kernel, rng, dtype=dtype)
        self.norm = LayerNorm(dim, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)

    def scan_groups(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        """The concatenated, grid-aligned VSSS outputs (before attention)."""
        outs = []
        for block, group, direction in zip(self.vsss, ad.split(x, 4, axis=-1), GROUP_DIRECTIONS):
            y = block(to_direction(group, hw, direction), hw, direction)
            outs.append(from_direction(y, hw, direction))
        return ad.concat(outs, axis=-1)

    def forward(self, x: Tensor, hw: tuple[int, int], attention: bool = True) -> Tensor:
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise ShapeError(f"group layer: expected (B, N, {self.dim}), got {x.shape}")
        x_vs = self.scan_groups(x, hw)
        if attention:
            x_vs = x_vs * self.ciam(x)
        return self.proj(self.norm(x_vs))


class FFN(Module):
    def __init__(self, dim: int, rng: np.random.Generator, ratio: int = 4, act: str = "silu", dtype=np.float64):
        self.act = act
        self.fc1 = Linear(dim, ratio * dim, rng, dtype=dtype)
        self.fc2 = Linear(ratio * dim, dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ACTIVATIONS[self.act](self.fc1(x)))


class MambaBlock(Module):
    """``x_t = x + GroupLayer(x)``; ``out = x_t + FFN(LN(x_t))``."""

    def __init__(self, dim: int, kernel: int, rng: np.random.Generator, n_state: int = 16,
                 ffn_ratio: int = 4, discretization: str = "zoh", act: str = "silu", dtype=np.float64):
        self.group_layer = MambaGroupLayer(dim, kernel, rng, n_state=n_state, discretization=discretization,
                                           act=act, dtype=dtype)
        self.norm = LayerNorm(dim, dtype=dtype)
        self.ffn = FFN(dim, rng, ratio=ffn_ratio, dtype=dtype)

    def forward(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        x_t = x + self.group_layer(x, hw)
        return x_t + self.ffn(self.norm(x_t))
