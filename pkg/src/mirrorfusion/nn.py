"""Parameter containers and the convolution layer used by all network blocks."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal container tracking parameters and child modules by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield (f"{prefix}{name}", p)
        for name, child in self._children.items():
            yield from child.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self) -> Iterator[Tensor]:
        for _, p in self.named_parameters():
            yield p

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def zero_all_parameters(self) -> None:
        """Fill every parameter with zeros (used by baseline/identity tests)."""
        for p in self.parameters():
            p.data[...] = 0.0


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._list = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._list)), module)
        self._list.append(module)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


def uniform_param(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    """Uniform(+-1/sqrt(fan_in)) parameter, quantized to float32 so the same
    build is reproducible bit-for-bit in either precision mode."""
    bound = 1.0 / math.sqrt(fan_in)
    master = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return Tensor(master.astype(T.default_dtype()), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=T.default_dtype()), requires_grad=True)


def scalar_param(value: float) -> Tensor:
    return Tensor(np.asarray(value, dtype=T.default_dtype()), requires_grad=True)


class Conv2d(Module):
    """Square-kernel 2-D convolution over [C,H,W] tensors."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: Optional[np.random.Generator] = None, stride: int = 1,
                 padding: int = 0, dilation: int = 1, bias: bool = True,
                 zero_init: bool = False):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.dilation = dilation
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        if zero_init:
            self.weight = zeros_param(shape)
        else:
            if rng is None:
                raise ValueError("Conv2d needs an rng unless zero_init=True")
            fan_in = in_channels * kernel_size * kernel_size
            self.weight = uniform_param(rng, shape, fan_in)
        self.bias = zeros_param((out_channels,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride,
                        padding=self.padding, dilation=self.dilation)
