"""Differentiable primitives on C x H x W feature maps.

Each op computes its forward value with numpy and records a closure that
maps the upstream gradient to input gradients.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import Tensor, record

LRN_ALPHA = 1e-4
LRN_BETA = 0.75
LRN_SIZE = 5


def _check_rank(x: Tensor, rank: int, op: str) -> None:
    if x.data.ndim != rank:
        raise ValueError(f"{op}: expected rank-{rank} input, got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution kernels (plain numpy, shared by conv2d and conv_transpose2d)


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # C, Ho, Wo, kh, kw view into the padded input
    return sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    span = n + 2 * pad - k
    if span < 0 or span % stride:
        raise ValueError(
            f"conv2d: extent {n} with kernel {k}, pad {pad} is not divisible by stride {stride}"
        )
    return span // stride + 1


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    kh, kw = w.shape[2:]
    win = _windows(_pad(x, pad), kh, kw, stride)
    return np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))


def _conv_kernel_grad(x: np.ndarray, g: np.ndarray, kshape, stride: int, pad: int) -> np.ndarray:
    kh, kw = kshape[2:]
    win = _windows(_pad(x, pad), kh, kw, stride)
    return np.tensordot(g, win, axes=([1, 2], [1, 2]))


def _conv_input_grad(g: np.ndarray, w: np.ndarray, in_shape, stride: int, pad: int) -> np.ndarray:
    C, H, W = in_shape
    _, _, kh, kw = w.shape
    Ho, Wo = g.shape[1:]
    cols = np.tensordot(w, g, axes=([0], [0]))  # C, kh, kw, Ho, Wo
    dxp = np.zeros((C, H + 2 * pad, W + 2 * pad), dtype=np.result_type(g, w))
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += cols[:, i, j]
    if pad:
        dxp = dxp[:, pad:-pad, pad:-pad]
    return dxp


# ---------------------------------------------------------------------------
# convolutions


def conv2d(
    x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0
) -> Tensor:
    """Zero-padded cross-correlation of a C x H x W map with an O x C x Kh x Kw kernel."""
    _check_rank(x, 3, "conv2d")
    if kernel.data.ndim != 4:
        raise ValueError(f"conv2d: kernel must be O x C x Kh x Kw, got {kernel.shape}")
    C, H, W = x.shape
    O, Ck, kh, kw = kernel.shape
    if Ck != C:
        raise ValueError(f"conv2d: input has {C} channels but kernel {kernel.shape} expects {Ck}")
    if bias is not None and bias.shape != (O,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {O} output channels")
    conv_out_size(H, kh, stride, pad)
    conv_out_size(W, kw, stride, pad)

    xd, wd = x.data, kernel.data
    out = _conv_forward(xd, wd, stride, pad)
    if bias is not None:
        out += bias.data[:, None, None]

    def grad_fn(g):
        gx = _conv_input_grad(g, wd, xd.shape, stride, pad) if x.requires_grad else None
        gw = _conv_kernel_grad(xd, g, wd.shape, stride, pad) if kernel.requires_grad else None
        gb = g.sum(axis=(1, 2)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv2d", out, inputs, grad_fn)


def conv_transpose2d(
    x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 2, pad: int = 1
) -> Tensor:
    """Transposed convolution with a C_in x C_out x Kh x Kw kernel.

    The forward value is the input-gradient of ``conv2d`` with the same kernel,
    stride and padding. Only configurations that exactly double H and W are
    accepted.
    """
    _check_rank(x, 3, "conv_transpose2d")
    C, H, W = x.shape
    Ci, Co, kh, kw = kernel.shape
    if Ci != C:
        raise ValueError(f"conv_transpose2d: input has {C} channels, kernel expects {Ci}")
    Ho = (H - 1) * stride - 2 * pad + kh
    Wo = (W - 1) * stride - 2 * pad + kw
    if Ho != 2 * H or Wo != 2 * W:
        raise ValueError(
            f"conv_transpose2d: kernel {kh}x{kw}, stride {stride}, pad {pad} maps "
            f"{H}x{W} to {Ho}x{Wo}, not an exact x2 upsampling"
        )
    xd, wd = x.data, kernel.data
    out = _conv_input_grad(xd, wd, (Co, Ho, Wo), stride, pad)
    if bias is not None:
        out += bias.data[:, None, None]

    def grad_fn(g):
        gx = _conv_forward(g, wd, stride, pad) if x.requires_grad else None
        gw = _conv_kernel_grad(g, xd, wd.shape, stride, pad) if kernel.requires_grad else None
        gb = g.sum(axis=(1, 2)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv_transpose2d", out, inputs, grad_fn)


# ---------------------------------------------------------------------------
# pooling and resampling


def maxpool2x2(x: Tensor) -> Tensor:
    """2 x 2 max pooling, stride 2. Ties route the gradient to the first
    element of the window in row-major order."""
    _check_rank(x, 3, "maxpool2x2")
    C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"maxpool2x2: extents must be even, got {H}x{W}")
    r = x.data.reshape(C, H // 2, 2, W // 2, 2).transpose(0, 1, 3, 2, 4).reshape(C, H // 2, W // 2, 4)
    idx = r.argmax(axis=-1)[..., None]
    out = np.take_along_axis(r, idx, axis=-1)[..., 0]

    def grad_fn(g):
        gr = np.zeros_like(r)
        np.put_along_axis(gr, idx, g[..., None], axis=-1)
        return (gr.reshape(C, H // 2, W // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(C, H, W),)

    return record("maxpool2x2", out, (x,), grad_fn)


def avgpool2x2(x: Tensor) -> Tensor:
    _check_rank(x, 3, "avgpool2x2")
    C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"avgpool2x2: extents must be even, got {H}x{W}")
    out = x.data.reshape(C, H // 2, 2, W // 2, 2).mean(axis=(2, 4))

    def grad_fn(g):
        return (np.repeat(np.repeat(g * 0.25, 2, axis=1), 2, axis=2),)

    return record("avgpool2x2", out, (x,), grad_fn)


def upsample_nearest2x(x: Tensor) -> Tensor:
    _check_rank(x, 3, "upsample_nearest2x")
    C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def grad_fn(g):
        return (g.reshape(C, H, 2, W, 2).sum(axis=(2, 4)),)

    return record("upsample_nearest2x", out, (x,), grad_fn)


def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Linear interpolation weights (n_out x n_in), half-pixel centres, edge clamped."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    m = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - w1)
    np.add.at(m, (rows, i1), w1)
    return m


def upsample_bilinear2x(x: Tensor) -> Tensor:
    _check_rank(x, 3, "upsample_bilinear2x")
    C, H, W = x.shape
    ah = interp_matrix(H, 2 * H, x.dtype)
    aw = interp_matrix(W, 2 * W, x.dtype)
    out = np.matmul(np.matmul(ah, x.data), aw.T)

    def grad_fn(g):
        return (np.matmul(np.matmul(ah.T, g), aw),)

    return record("upsample_bilinear2x", out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# pointwise and normalisation


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)
    return record("relu", out, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def _channel_window_sum(a: np.ndarray, half: int) -> np.ndarray:
    K = a.shape[0]
    s = a.copy()
    for d in range(1, half + 1):
        if d >= K:
            break
        s[d:] += a[:-d]
        s[:-d] += a[d:]
    return s


def lrn(x: Tensor, alpha: float = LRN_ALPHA, beta: float = LRN_BETA, n_window: int = LRN_SIZE) -> Tensor:
    """Cross-channel local response normalisation.

    ``y_k = x_k / (1 + alpha/N * sum_{k' in window(k)} x_k'^2) ** beta`` with the
    window ``[max(0, k - N//2), min(K - 1, k + N//2)]``.
    """
    if alpha < 0 or beta <= 0 or n_window < 1:
        raise ValueError(f"lrn: invalid constants alpha={alpha}, beta={beta}, N={n_window}")
    _check_rank(x, 3, "lrn")
    half = n_window // 2
    xd = x.data
    scale = alpha / n_window
    denom = 1.0 + scale * _channel_window_sum(xd * xd, half)
    inv = denom ** (-beta)
    out = xd * inv

    def grad_fn(g):
        t = g * xd * inv / denom
        return (g * inv - (2.0 * beta * scale) * xd * _channel_window_sum(t, half),)

    return record("lrn", out, (x,), grad_fn)


def softmax_cols(s: Tensor) -> Tensor:
    """Column-wise softmax of an M x M score matrix (each column sums to 1)."""
    _check_rank(s, 2, "softmax_cols")
    z = s.data - s.data.max(axis=0, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=0, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=0, keepdims=True)),)

    return record("softmax_cols", out, (s,), grad_fn)


# ---------------------------------------------------------------------------
# linear algebra and structural ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul: expected matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def grad_fn(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return record("matmul", out, (a, b), grad_fn)


def transpose(a: Tensor) -> Tensor:
    _check_rank(a, 2, "transpose")
    return record("transpose", a.data.T, (a,), lambda g: (g.T,))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    out = x.data.reshape(shape)
    if out.ndim < 1 or out.ndim > 4:
        raise ValueError(f"reshape: rank must stay within 1-4, got {out.shape}")
    return record("reshape", out, (x,), lambda g: (g.reshape(old),))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _check_rank(a, 3, "concat_channels")
    _check_rank(b, 3, "concat_channels")
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"concat_channels: spatial mismatch {a.shape} vs {b.shape}")
    ca = a.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)
    return record("concat_channels", out, (a, b), lambda g: (g[:ca], g[ca:]))


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _check_rank(x, 3, "slice_channels")
    C = x.shape[0]
    if not 0 <= start < stop <= C:
        raise ValueError(f"slice_channels: [{start}, {stop}) out of range for {C} channels")
    out = x.data[start:stop].copy()

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return record("slice_channels", out, (x,), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scaled_residual(o: Tensor, gamma: Tensor, x: Tensor) -> Tensor:
    """``gamma * o + x`` for a one-element ``gamma``.

    With ``gamma == 0`` the value is ``x`` copied bitwise (no signed-zero or
    NaN leakage from ``o``); gradients are unaffected.
    """
    if o.shape != x.shape:
        raise ValueError(f"scaled_residual: shape mismatch {o.shape} vs {x.shape}")
    if gamma.size != 1:
        raise ValueError(f"scaled_residual: gamma must be a scalar, got {gamma.shape}")
    gv = gamma.data.reshape(())
    od = o.data
    out = x.data.copy() if gv == 0 else gv * od + x.data
    gshape = gamma.shape

    def grad_fn(g):
        return (g * gv, np.full(gshape, (g * od).sum(), dtype=gamma.dtype), g)

    return record("scaled_residual", out, (o, gamma, x), grad_fn)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    out = np.array([x.data.sum()], dtype=x.dtype)
    return record("sum", out, (x,), lambda g: (np.broadcast_to(g.reshape(()), shape).copy(),))


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """``sum(x * weights)`` for a constant weight array."""
    if weights.shape != x.shape:
        raise ValueError(f"weighted_sum: weight shape {weights.shape} != {x.shape}")
    out = np.array([(x.data * weights).sum()], dtype=x.dtype)
    return record("weighted_sum", out, (x,), lambda g: (g.reshape(()) * weights,))


def binary_cross_entropy(pred: Tensor, target: np.ndarray, eps: float = 1e-7) -> Tensor:
    """Mean pixel-wise BCE of probabilities against a constant {0,1} target.

    Probabilities are clamped to ``[eps, 1 - eps]`` before the logarithms; the
    gradient is taken at the clamped value so saturated pixels still learn.
    """
    if pred.shape != target.shape:
        raise ValueError(f"binary_cross_entropy: shape mismatch {pred.shape} vs {target.shape}")
    p = np.clip(pred.data.astype(np.float64), eps, 1.0 - eps)
    m = target.astype(np.float64)
    n = p.size
    loss = -(m * np.log(p) + (1.0 - m) * np.log1p(-p)).sum() / n
    out = np.array([loss], dtype=pred.dtype)

    def grad_fn(g):
        gp = (p - m) / (p * (1.0 - p)) / n
        return ((g.reshape(()) * gp).astype(pred.dtype),)

    return record("binary_cross_entropy", out, (pred,), grad_fn)
