"""Position-wise self-attention over a C x H x W feature map.

    f = W_f * x,  g = W_g * x          (1 x 1 convs, C -> C1, no bias)
    s = f^T g                          (HW x HW scores)
    beta = column softmax of s         (beta[i, j]: weight of position i for output j)
    o = (W_h * x) beta                 (C x HW, reshaped to C x H x W)
    y = gamma * o + x                  (gamma starts at 0)
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autograd import Parameter, Tensor
from .layers import Module

DEFAULT_POSITION_CAP = 4096


class AttentionCapError(ValueError):
    """The feature map has more positions than the attention map may hold."""


class SelfAttention(Module):
    def __init__(
        self,
        name: str,
        channels: int,
        c1_divisor: int = 8,
        position_cap: int = DEFAULT_POSITION_CAP,
        dtype=np.float64,
    ):
        if channels < 1 or c1_divisor < 1:
            raise ValueError(f"invalid attention config: channels={channels}, c1_divisor={c1_divisor}")
        self.channels = channels
        self.c1_divisor = c1_divisor
        self.c1 = max(1, channels // c1_divisor)
        self.position_cap = position_cap
        c, c1 = channels, self.c1
        self.w_f = Parameter(f"{name}.w_f", np.zeros((c1, c, 1, 1)), dtype=dtype)
        self.w_g = Parameter(f"{name}.w_g", np.zeros((c1, c, 1, 1)), dtype=dtype)
        self.w_h = Parameter(f"{name}.w_h", np.zeros((c, c, 1, 1)), dtype=dtype)
        self.gamma = Parameter(f"{name}.gamma", np.zeros(1), dtype=dtype)

    def _check(self, x: Tensor) -> int:
        if x.data.ndim != 3:
            raise ValueError(f"attention expects a C x H x W map, got shape {x.shape}")
        if x.shape[0] != self.channels:
            raise ValueError(f"attention built for {self.channels} channels, got {x.shape[0]}")
        n = x.shape[1] * x.shape[2]
        if n > self.position_cap:
            raise AttentionCapError(
                f"attention over {x.shape[1]}x{x.shape[2]} = {n} positions exceeds the cap of "
                f"{self.position_cap}; the attention map would need {n * n} entries"
            )
        return n

    def attention_map(self, x: Tensor) -> Tensor:
        """The HW x HW column-stochastic weight matrix beta."""
        n = self._check(x)
        f = ops.reshape(ops.conv2d(x, self.w_f), (self.c1, n))
        g = ops.reshape(ops.conv2d(x, self.w_g), (self.c1, n))
        return ops.softmax_cols(ops.matmul(ops.transpose(f), g))

    def weighted_output(self, x: Tensor) -> Tensor:
        """o: every output position is a beta-weighted sum of W_h * x."""
        n = self._check(x)
        beta = self.attention_map(x)
        h = ops.reshape(ops.conv2d(x, self.w_h), (self.channels, n))
        return ops.reshape(ops.matmul(h, beta), x.shape)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.scaled_residual(self.weighted_output(x), self.gamma, x)


def attention_forward(x: Tensor, module: SelfAttention) -> Tensor:
    return module(x)


def attention_map(x: Tensor, module: SelfAttention) -> Tensor:
    return module.attention_map(x)


def pooled_attention(x: Tensor, module: SelfAttention) -> tuple[Tensor, int]:
    """Attention that fits the position cap by average-pooling x by 2 until
    the map is small enough, then nearest-upsampling o back.

    Returns ``(y, levels)`` where ``levels`` is the number of halvings applied
    (0 means plain attention).
    """
    levels = 0
    xp = x
    while xp.shape[1] * xp.shape[2] > module.position_cap:
        if xp.shape[1] % 2 or xp.shape[2] % 2:
            raise AttentionCapError(f"cannot pool {xp.shape} below the attention cap")
        xp = ops.avgpool2x2(xp)
        levels += 1
    if levels == 0:
        return module(x), 0
    o = module.weighted_output(xp)
    for _ in range(levels):
        o = ops.upsample_nearest2x(o)
    return ops.scaled_residual(o, module.gamma, x), levels
