"""Parameter containers and the basic layers built on :mod:`mambahash.autodiff`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def parameter(data, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return parameter(rng.uniform(-bound, bound, size=shape), dtype)


def _he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    # keeps activation scale through stacked ReLU convolutions
    return parameter(rng.normal(0.0, np.sqrt(2.0 / max(fan_in, 1)), size=shape), dtype)


class Module:
    """Attribute-discovered parameter tree, in the usual style.

    Parameters are any ``Tensor`` attribute with ``requires_grad``; children are
    ``Module`` attributes or lists of modules.  Names are dotted attribute paths.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, dtype=np.float64):
        self.weight = _uniform(rng, (d_in, d_out), d_in, dtype)
        self.bias = parameter(np.zeros(d_out), dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


class Conv2d(Module):
    """Channels-last convolution; weight layout (kh, kw, Cin, Cout)."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int | None = None,
        dtype=np.float64,
    ):
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.weight = _he_normal(rng, (kernel, kernel, c_in, c_out), kernel * kernel * c_in, dtype)
        self.bias = parameter(np.zeros(c_out), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class DepthwiseConv2d(Module):
    """One k×k filter per channel, same padding by default."""

    def __init__(self, channels: int, kernel: int, rng: np.random.Generator, stride: int = 1, dtype=np.float64):
        self.stride = stride
        self.padding = kernel // 2
        self.weight = _uniform(rng, (kernel, kernel, channels), kernel * kernel, dtype)
        self.bias = parameter(np.zeros(channels), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ad.depthwise_conv2d(x, self.weight, self.bias, self.stride, self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float64):
        self.eps = eps
        self.gamma = parameter(np.ones(dim), dtype)
        self.beta = parameter(np.zeros(dim), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


ACTIVATIONS = {
    "silu": ad.silu,
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "identity": lambda x: x,
}
