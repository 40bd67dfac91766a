"""BCE loss, Adam, the training loop and binary checkpoints."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import ops
from .autograd import Parameter, Tensor, backward
from .datapipe import Sample, hflip, preprocess
from .network import NetConfig, SaliencyModel

logger = logging.getLogger(__name__)

MAGIC = b"ARNS"
VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    steps: int = 500
    batch_size: int = 1
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.steps < 0 or self.checkpoint_every < 0:
            raise ValueError("steps and checkpoint_every must be >= 0")
        if self.batch_size != 1:
            raise ValueError("only batch_size 1 is supported")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


class NonFiniteGradientError(FloatingPointError):
    pass


def bce_loss(pred: Tensor, mask) -> Tensor:
    """Mean pixel-wise binary cross-entropy (predictions clamped to [1e-7, 1 - 1e-7])."""
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    return ops.binary_cross_entropy(pred, m)


def adam_step(params: Iterable[Parameter], config: TrainConfig, t: int) -> None:
    """One bias-corrected Adam update at step ``t`` (1-based); zeroes gradients.

    Nothing is updated if any gradient is non-finite.
    """
    if t < 1:
        raise ValueError(f"Adam step index must be >= 1, got {t}")
    params = [p for p in params if p.trainable]
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter {p.name!r}")
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.epsilon
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p in params:
        g = p.grad
        p.adam_m *= b1
        p.adam_m += (1.0 - b1) * g
        p.adam_v *= b2
        p.adam_v += (1.0 - b2) * (g * g)
        m_hat = p.adam_m / c1
        v_hat = p.adam_v / c2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
        p.zero_grad()


# ---------------------------------------------------------------------------
# training loop


def step_choice(seed: int, step: int, n_samples: int) -> tuple[int, bool]:
    """Sample index and flip decision for a (1-based) step; a pure function of
    ``(seed, step)`` so resumed runs replay the same data order."""
    rng = np.random.default_rng([seed, step])
    return int(rng.integers(n_samples)), bool(rng.random() < 0.5)


@dataclass
class TrainState:
    model: SaliencyModel
    train_config: TrainConfig
    channel_means: tuple
    step: int = 0
    log: list = field(default_factory=list)


def train(
    model: SaliencyModel,
    samples: Sequence[Sample],
    train_cfg: TrainConfig,
    channel_means,
    start_step: int = 0,
    checkpoint_path: Optional[os.PathLike] = None,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> list[tuple[int, float]]:
    """Run Adam steps ``start_step + 1 .. train_cfg.steps``; returns ``[(step, loss)]``.

    Each step draws one sample, flips it with probability 1/2, and applies a
    BCE gradient step. When ``checkpoint_path`` is set a checkpoint is written
    every ``checkpoint_every`` steps and after the last step.
    """
    if not samples:
        raise ValueError("no training samples")
    params = model.parameters()
    model.zero_grad()
    dtype = model.config.dtype
    log = []
    step = start_step
    for step in range(start_step + 1, train_cfg.steps + 1):
        idx, flip = step_choice(train_cfg.seed, step, len(samples))
        sample = hflip(samples[idx]) if flip else samples[idx]
        image = Tensor(preprocess(sample, channel_means), dtype=dtype)
        loss = bce_loss(model(image), sample.mask)
        backward(loss)
        adam_step(params, train_cfg, step)
        value = float(loss.data[0])
        log.append((step, value))
        if on_step is not None:
            on_step(step, value)
        if checkpoint_path is not None and train_cfg.checkpoint_every and step % train_cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, model, train_cfg, channel_means, step)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, train_cfg, channel_means, max(step, start_step))
    return log


# ---------------------------------------------------------------------------
# checkpoints
#
# layout (little-endian):
#   b"ARNS", u32 version, u32 blob length, JSON config blob,
#   u32 parameter count, then per parameter:
#     u32 name length, name (utf-8), u32 rank, rank x u32 extents,
#     value, adam_m, adam_v  (each product(extents) floats of the recorded precision)
#   u32 CRC32 of every preceding byte


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path: os.PathLike,
    model: SaliencyModel,
    train_config: Optional[TrainConfig] = None,
    channel_means=(0.0, 0.0, 0.0),
    step: int = 0,
) -> None:
    cfg = model.config
    fmt = "<f4" if cfg.precision == 32 else "<f8"
    blob = json.dumps(
        {
            "precision": cfg.precision,
            "net_config": cfg.to_dict(),
            "train_config": (train_config or TrainConfig()).to_dict(),
            "channel_means": [float(m) for m in channel_means],
            "step": int(step),
        },
        sort_keys=True,
    ).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    params = model.parameters()
    parts.append(struct.pack("<I", len(params)))
    for p in params:
        name = p.name.encode()
        parts.append(struct.pack("<I", len(name)) + name)
        parts.append(struct.pack(f"<I{p.data.ndim}I", p.data.ndim, *p.shape))
        for arr in (p.data, p.adam_m, p.adam_v):
            parts.append(np.ascontiguousarray(arr, dtype=fmt).tobytes())
    body = b"".join(parts)
    payload = body + struct.pack("<I", zlib.crc32(body))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: os.PathLike) -> TrainState:
    """Read a checkpoint; raises :class:`CheckpointError` before touching any
    model if the file is corrupt, truncated or from another version."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an ARNS checkpoint")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    r = _Reader(body)
    r.take(4)
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: CRC mismatch, file is corrupt or truncated")
    meta = json.loads(r.take(r.u32()).decode())
    net_cfg = NetConfig.from_dict(meta["net_config"])
    fmt = "<f4" if meta["precision"] == 32 else "<f8"
    itemsize = np.dtype(fmt).itemsize
    records = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        rank = r.u32()
        shape = tuple(r.u32() for _ in range(rank))
        n = math.prod(shape)
        arrays = [np.frombuffer(r.take(n * itemsize), dtype=fmt).reshape(shape) for _ in range(3)]
        records[name] = arrays
    if r.pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after parameter records")

    model = SaliencyModel(net_cfg, init=False)
    expected = model.parameter_dict()
    if set(expected) != set(records):
        missing = sorted(set(expected) - set(records))
        extra = sorted(set(records) - set(expected))
        raise CheckpointError(f"{path}: parameter set mismatch (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, p in expected.items():
        value, m, v = records[name]
        if value.shape != p.shape:
            raise CheckpointError(f"{path}: {name} has shape {value.shape}, model expects {p.shape}")
        p.data[...] = value
        p.adam_m[...] = m
        p.adam_v[...] = v
    return TrainState(
        model=model,
        train_config=TrainConfig.from_dict(meta["train_config"]),
        channel_means=tuple(meta["channel_means"]),
        step=int(meta["step"]),
    )
