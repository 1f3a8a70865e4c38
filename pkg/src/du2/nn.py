"""Parameterized layers built on the autodiff ops.

Layers are plain objects exposing ``__call__`` and ``named_parameters``.
Weight init is uniform in +-sqrt(6 / fan_in), drawn from the generator the
caller supplies so a run seed fixes every parameter.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .ops import ConvSpec, conv2d, conv3d, leaky_relu

__all__ = ["init_uniform", "Conv2d", "Conv3d", "ResidualBlock2d", "collect_parameters"]


def init_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Conv2d:
    def __init__(self, name, in_channels, out_channels, kernel=3, stride=1,
                 dilation=1, bias=True, rng: np.random.Generator | None = None):
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        self.name = name
        self.spec = ConvSpec(in_channels, out_channels, tuple(kernel), stride, dilation)
        fan_in = in_channels * int(np.prod(kernel))
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(init_uniform(rng, self.spec.weight_shape(), fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.spec, self.weight, self.bias)

    def named_parameters(self):
        out = [(f"{self.name}.weight", self.weight)]
        if self.bias is not None:
            out.append((f"{self.name}.bias", self.bias))
        return out

    def parameter_count(self) -> int:
        n = self.weight.size
        if self.bias is not None:
            n += self.bias.size
        return n


class Conv3d:
    def __init__(self, name, in_channels, out_channels, kernel=3, stride=1,
                 dilation=1, bias=True, rng: np.random.Generator | None = None):
        if isinstance(kernel, int):
            kernel = (kernel, kernel, kernel)
        self.name = name
        self.spec = ConvSpec(in_channels, out_channels, tuple(kernel), stride, dilation)
        fan_in = in_channels * int(np.prod(kernel))
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(init_uniform(rng, self.spec.weight_shape(), fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv3d(x, self.spec, self.weight, self.bias)

    def named_parameters(self):
        out = [(f"{self.name}.weight", self.weight)]
        if self.bias is not None:
            out.append((f"{self.name}.bias", self.bias))
        return out

    def parameter_count(self) -> int:
        n = self.weight.size
        if self.bias is not None:
            n += self.bias.size
        return n


class ResidualBlock2d:
    """Two same-padded 3x3 convs with leaky ReLU, skip-added."""

    def __init__(self, name, channels, slope=0.2, rng=None):
        self.slope = slope
        self.conv1 = Conv2d(f"{name}.conv1", channels, channels, 3, rng=rng)
        self.conv2 = Conv2d(f"{name}.conv2", channels, channels, 3, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = leaky_relu(self.conv1(x), self.slope)
        h = leaky_relu(self.conv2(h), self.slope)
        return x + h

    def named_parameters(self):
        return self.conv1.named_parameters() + self.conv2.named_parameters()

    def parameter_count(self) -> int:
        return self.conv1.parameter_count() + self.conv2.parameter_count()


def collect_parameters(modules) -> list:
    """Flatten ``named_parameters`` across a list of layer objects."""
    out = []
    for m in modules:
        out.extend(m.named_parameters())
    return out
