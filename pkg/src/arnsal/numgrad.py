"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import ops
from .autograd import Parameter, Tensor, backward, no_grad

# Test hook: when nonzero, analytic gradients are scaled by (1 + this) before
# comparison so the harness can be shown to fail.
ANALYTIC_PERTURBATION = 0.0


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    a = np.abs(analytic)
    n = np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), 1e-8)


@dataclass
class GradcheckReport:
    name: str
    max_rel_error: float
    n_checked: int
    tolerance: float
    worst: Optional[tuple] = None
    per_input: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max rel err {self.max_rel_error:.3e} over {self.n_checked} entries (tol {self.tolerance:g})"


def _scalarize(out: Tensor, weights: Optional[np.ndarray]) -> Tensor:
    if out.size == 1:
        return out
    return ops.weighted_sum(out, weights)


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    *,
    eps: float = 1e-5,
    tolerance: float = 1e-4,
    max_entries: Optional[int] = None,
    seed: int = 0,
    name: str = "gradcheck",
    entries: Optional[Sequence[tuple]] = None,
    reduce: str = "random",
) -> GradcheckReport:
    """Compare backprop gradients of ``fn(*inputs)`` against central differences.

    Non-scalar outputs are reduced to a scalar loss with fixed weights:
    standard normal (``reduce="random"``, so every element contributes with
    its own sign) or all ones (``reduce="sum"``). The finite difference is
    taken elementwise on the outputs before weighting, which keeps roundoff
    from a large loss value out of small gradients. ``max_entries`` caps the number of input
    elements perturbed per input (sampled with ``seed``). ``entries`` instead
    lists explicit ``(input_index, flat_index)`` pairs to check.

    All inputs must be float64.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("gradcheck requires float64 inputs")
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)

    with no_grad():
        probe = fn(*inputs)
    if reduce not in ("random", "sum"):
        raise ValueError(f"reduce must be 'random' or 'sum', got {reduce!r}")
    if probe.size == 1:
        weights = None
    elif reduce == "sum":
        weights = np.ones(probe.shape)
    else:
        weights = rng.standard_normal(probe.shape)

    saved = [(t.requires_grad, t.grad) for t in inputs]
    for t in inputs:
        if isinstance(t, Parameter):
            t.grad = np.zeros_like(t.data)
        else:
            t.requires_grad = True
            t.grad = None
    try:
        backward(_scalarize(fn(*inputs), weights))
        analytic = [
            np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs
        ]
    finally:
        for t, (rg, g) in zip(inputs, saved):
            t.requires_grad = rg
            t.grad = g

    if entries is None:
        entries = []
        for k, t in enumerate(inputs):
            idx = np.arange(t.size)
            if max_entries is not None and t.size > max_entries:
                idx = np.sort(rng.choice(t.size, size=max_entries, replace=False))
            entries.extend((k, int(i)) for i in idx)

    def output() -> np.ndarray:
        with no_grad():
            return fn(*inputs).data.copy()

    worst = (0.0, None)
    per_input = [0.0] * len(inputs)
    for k, i in entries:
        flat = inputs[k].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + eps
        out_plus = output()
        flat[i] = orig - eps
        out_minus = output()
        flat[i] = orig
        diff = out_plus - out_minus
        if weights is not None:
            diff = diff * weights
        numeric = math.fsum(diff.ravel()) / (2 * eps)
        a = analytic[k].reshape(-1)[i] * (1.0 + ANALYTIC_PERTURBATION)
        err = float(relative_error(np.array(a), np.array(numeric)))
        per_input[k] = max(per_input[k], err)
        if err > worst[0] or worst[1] is None:
            worst = (err, (k, i, float(a), float(numeric)))

    return GradcheckReport(
        name=name,
        max_rel_error=worst[0],
        n_checked=len(entries),
        tolerance=tolerance,
        worst=worst[1],
        per_input=per_input,
    )
