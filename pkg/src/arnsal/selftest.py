"""Gradient and invariant suites run by ``arnsal gradcheck`` / ``arnsal selftest``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .attention import SelfAttention
from .autograd import Parameter, Tensor, no_grad
from .numgrad import GradcheckReport, gradcheck
from .metrics import f_measure
from .network import NetConfig, SaliencyModel
from .rcl import RclUnit

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def __str__(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}" + (f": {self.detail}" if self.detail else "")


def _t(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _p(rng, name, *shape, scale=1.0) -> Parameter:
    return Parameter(name, scale * rng.standard_normal(shape))


def primitive_cases(seed: int) -> list[tuple[str, Callable, list]]:
    """(name, fn, inputs) for every primitive, on small random 64-bit inputs."""
    rng = np.random.default_rng(seed)
    x = lambda: _t(rng, 2, 4, 4)  # noqa: E731
    mask = (rng.random((2, 4, 4)) > 0.5).astype(np.float64)
    return [
        ("conv2d", lambda a, k, b: ops.conv2d(a, k, b, stride=1, pad=1), [x(), _p(rng, "k", 3, 2, 3, 3), _p(rng, "b", 3)]),
        ("conv2d_stride2", lambda a, k: ops.conv2d(a, k, stride=2, pad=1), [x(), _p(rng, "k", 3, 2, 4, 4)]),
        ("conv_transpose2d", lambda a, k, b: ops.conv_transpose2d(a, k, b), [x(), _p(rng, "k", 2, 3, 4, 4), _p(rng, "b", 3)]),
        ("maxpool2x2", ops.maxpool2x2, [x()]),
        ("relu", ops.relu, [x()]),
        ("lrn", ops.lrn, [x()]),
        ("lrn_6ch_alpha1", lambda a: ops.lrn(a, alpha=1.0, beta=0.75, n_window=5), [_t(rng, 6, 4, 4)]),
        ("softmax_cols", ops.softmax_cols, [_t(rng, 6, 6)]),
        ("sigmoid", ops.sigmoid, [x()]),
        ("matmul", ops.matmul, [_t(rng, 3, 4), _t(rng, 4, 2)]),
        ("concat_channels", ops.concat_channels, [x(), _t(rng, 1, 4, 4)]),
        ("avgpool2x2", ops.avgpool2x2, [x()]),
        ("upsample_nearest2x", ops.upsample_nearest2x, [x()]),
        ("upsample_bilinear2x", ops.upsample_bilinear2x, [x()]),
        ("scaled_residual", ops.scaled_residual, [x(), _p(rng, "gamma", 1), x()]),
        ("binary_cross_entropy", lambda a: ops.binary_cross_entropy(ops.sigmoid(a), mask), [x()]),
    ]


def attention_case(seed: int):
    rng = np.random.default_rng(seed)
    att = SelfAttention("att", 8, c1_divisor=8)
    att.init_parameters(rng)
    att.gamma.data[...] = rng.uniform(0.5, 1.5)
    x = _t(rng, 8, 3, 3)
    fn = lambda a, *params: att(a)  # noqa: E731
    return fn, [x, att.w_f, att.w_g, att.w_h, att.gamma]


def rcl_case(seed: int, t_steps: int = 2):
    rng = np.random.default_rng(seed)
    unit = RclUnit("rcl", 2, 3, t_steps=t_steps)
    unit.init_parameters(rng)
    unit.b.data[...] = rng.uniform(0.1, 0.3, size=3)
    u = _t(rng, 2, 4, 4)
    fn = lambda a, *params: unit(a)  # noqa: E731
    return fn, [u, unit.w_f, unit.w_r, unit.b]


def model_case(seed: int, n_entries: int = 20):
    """32 x 32 model with random nonzero gammas; returns (fn, params, entries)
    where ``entries`` picks one element in each of ``n_entries`` parameters.
    ``fn`` returns the saliency map; check it with ``reduce="sum"``."""
    rng = np.random.default_rng(seed)
    model = SaliencyModel(NetConfig(input_size=32, width_mult=0.0625, rcl_channels=4,
                                    decoder_channels=4, rcl_t_steps=2, seed=seed))
    for att in model.attention_modules():
        att.gamma.data[...] = rng.uniform(0.5, 1.0)
    image = Tensor(rng.standard_normal((3, 32, 32)) * 60.0)
    params = model.parameters()
    chosen = sorted(rng.choice(len(params), size=min(n_entries, len(params)), replace=False))
    inputs = [params[i] for i in chosen]
    entries = [(k, int(rng.integers(p.size))) for k, p in enumerate(inputs)]
    fn = lambda *ps: model(image)  # noqa: E731
    return fn, inputs, entries


def gradient_suite(seed: int = 0, seeds_per_primitive: int = 3) -> list[GradcheckReport]:
    reports = []
    for s in range(seed, seed + seeds_per_primitive):
        for name, fn, inputs in primitive_cases(s):
            reports.append(gradcheck(fn, inputs, tolerance=TOLERANCE, seed=s, name=f"{name}[seed {s}]"))
    fn, inputs = attention_case(seed)
    reports.append(gradcheck(fn, inputs, tolerance=TOLERANCE, seed=seed, name="attention"))
    fn, inputs = rcl_case(seed)
    reports.append(gradcheck(fn, inputs, tolerance=TOLERANCE, seed=seed, name="rcl(t_steps=2)"))
    fn, inputs, entries = model_case(seed)
    reports.append(gradcheck(fn, inputs, tolerance=TOLERANCE, seed=seed, entries=entries, reduce="sum", name="model 32x32 (sum of output)"))
    return reports


def invariant_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    # attention is the identity while gamma == 0
    att = SelfAttention("att", 8)
    att.init_parameters(rng)
    ok = True
    with no_grad():
        for _ in range(10):
            x = _t(rng, 8, 4, 4)
            ok &= np.array_equal(att(x).data, x.data)
    results.append(CheckResult("attention identity at gamma=0", bool(ok)))

    # attention map is column stochastic
    worst = 0.0
    in_range = True
    with no_grad():
        for _ in range(10):
            beta = att.attention_map(Tensor(rng.standard_normal((8, 4, 4)) * 3.0)).data
            worst = max(worst, float(np.abs(beta.sum(axis=0) - 1.0).max()))
            in_range &= bool(beta.min() >= 0 and beta.max() <= 1)
    results.append(CheckResult("attention map column sums", worst <= 1e-9 and in_range, f"max |sum-1| {worst:.2e}"))

    # rcl collapses to one step when the recurrent kernel is zero
    unit = RclUnit("rcl", 2, 3, t_steps=3)
    unit.init_parameters(rng)
    u = _t(rng, 2, 4, 4)
    with no_grad():
        y3 = unit(u).data
        unit.t_steps = 0
        y0 = unit(u).data
        unit.t_steps = 3
        unit.w_r.data[...] = 0
        y3_zero = unit(u).data
    results.append(CheckResult("rcl zero recurrent kernel", bool(np.array_equal(y0, y3_zero)) and not np.array_equal(y0, y3)))

    # conv / transposed conv adjointness
    x = _t(rng, 3, 8, 8)
    k = _p(rng, "k", 5, 3, 4, 4)
    y = _t(rng, 5, 4, 4)
    with no_grad():
        lhs = float((ops.conv2d(x, k, stride=2, pad=1).data * y.data).sum())
        kt = Parameter("kt", k.data)
        rhs = float((x.data * ops.conv_transpose2d(y, kt).data).sum())
    results.append(CheckResult("conv adjointness", abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs)), f"|diff| {abs(lhs - rhs):.2e}"))

    # lrn never amplifies
    with no_grad():
        x = Tensor(rng.standard_normal((6, 4, 4)) * 10)
        results.append(CheckResult("lrn attenuation", bool(np.all(np.abs(ops.lrn(x, alpha=1.0).data) <= np.abs(x.data)))))

    results.append(CheckResult("f_measure(p, p) == p", all(f_measure(p, p) == p for p in (0.0, 0.25, 0.5, 1.0))))

    shapes = SaliencyModel(NetConfig(input_size=224, width_mult=1.0, rcl_channels=64, decoder_channels=64), init=False).trace_shapes()
    ladder = [shapes[k][1] for k in ("L2", "L3", "L4", "S5")]
    results.append(CheckResult("224 shape ladder", ladder == [112, 56, 28, 14] and shapes["output"] == (1, 224, 224), f"{ladder}"))
    return results
