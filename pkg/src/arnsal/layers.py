"""Parameter-holding building blocks shared by the network modules."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .autograd import Parameter, Tensor


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Owner of Parameters. Parameters and child modules are discovered from
    instance attributes (including lists of modules), in definition order."""

    def named_parameters(self) -> Iterator[Parameter]:
        for value in vars(self).values():
            if isinstance(value, Parameter):
                yield value
            elif isinstance(value, Module):
                yield from value.named_parameters()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.named_parameters()

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.named_parameters():
            p.zero_grad()

    def init_parameters(self, rng: np.random.Generator) -> None:
        """Xavier-uniform weights, zero biases (and zero for anything 1-D)."""
        for p in self.named_parameters():
            if p.data.ndim == 4:
                # the bound only needs fan_in + fan_out, so conv and transposed
                # conv kernels share this
                a, b, kh, kw = p.shape
                p.data[...] = xavier_uniform(rng, p.shape, b * kh * kw, a * kh * kw)
            else:
                p.data[...] = 0.0


class Conv2d(Module):
    def __init__(self, name: str, c_in: int, c_out: int, k: int = 3, pad=None, bias: bool = True, dtype=np.float64):
        self.pad = k // 2 if pad is None else pad
        self.weight = Parameter(f"{name}.weight", np.zeros((c_out, c_in, k, k)), dtype=dtype)
        self.bias = Parameter(f"{name}.bias", np.zeros(c_out), dtype=dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=1, pad=self.pad)


class ConvTranspose2x(Module):
    """Learnable exact x2 upsampler (4 x 4 kernel, stride 2, pad 1)."""

    def __init__(self, name: str, c_in: int, c_out: int, dtype=np.float64):
        self.weight = Parameter(f"{name}.weight", np.zeros((c_in, c_out, 4, 4)), dtype=dtype)
        self.bias = Parameter(f"{name}.bias", np.zeros(c_out), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias, stride=2, pad=1)
