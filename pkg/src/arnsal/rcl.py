"""Recurrent convolutional layer with weight sharing across time steps.

    x(0) = lrn(relu(w_f * u + b))
    x(t) = lrn(relu(w_f * u + w_r * x(t-1) + b)),   t = 1..t_steps
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autograd import Parameter, Tensor
from .layers import Module


class RclUnit(Module):
    def __init__(
        self,
        name: str,
        c_in: int,
        channels: int,
        t_steps: int = 3,
        lrn_alpha: float = ops.LRN_ALPHA,
        lrn_beta: float = ops.LRN_BETA,
        lrn_size: int = ops.LRN_SIZE,
        dtype=np.float64,
    ):
        if t_steps < 0:
            raise ValueError(f"t_steps must be >= 0, got {t_steps}")
        self.c_in = c_in
        self.channels = channels
        self.t_steps = t_steps
        self.lrn_alpha, self.lrn_beta, self.lrn_size = lrn_alpha, lrn_beta, lrn_size
        self.w_f = Parameter(f"{name}.w_f", np.zeros((channels, c_in, 3, 3)), dtype=dtype)
        self.w_r = Parameter(f"{name}.w_r", np.zeros((channels, channels, 3, 3)), dtype=dtype)
        self.b = Parameter(f"{name}.b", np.zeros(channels), dtype=dtype)

    def _g(self, z: Tensor) -> Tensor:
        return ops.lrn(ops.relu(z), self.lrn_alpha, self.lrn_beta, self.lrn_size)

    def __call__(self, u: Tensor) -> Tensor:
        if u.data.ndim != 3:
            raise ValueError(f"rcl expects a C x H x W map, got shape {u.shape}")
        if u.shape[0] != self.c_in:
            raise ValueError(f"rcl built for {self.c_in} input channels, got {u.shape[0]}")
        # the feed-forward term is identical at every step; compute it once
        ff = ops.conv2d(u, self.w_f, self.b, pad=1)
        x = self._g(ff)
        for _ in range(self.t_steps):
            x = self._g(ops.add(ff, ops.conv2d(x, self.w_r, pad=1)))
        return x


def rcl_forward(u: Tensor, unit: RclUnit) -> Tensor:
    return unit(u)
