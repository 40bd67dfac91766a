"""VGG-style backbone with side outputs and the attentional recurrent decoder.

Dataflow for an S x S image::

    backbone: conv1_1..conv5_3 (blocks of 2/2/3/3/3, 2x2 max-pool between blocks)
        L2 = conv2_2 (S/2), L3 = conv3_3 (S/4), L4 = conv4_3 (S/8), S5 = conv5_3 (S/16)
    decoder:
        S5_att = att5(S5)
        for k in 4, 3, 2:
            U_k = up_k(S{k+1}_att)                # transposed conv, x2
            R_k = rcl_k(adapter_k(L_k))
            S{k}_att = att_k(relu(fuse_k(concat(U_k, R_k))))
        out = bilinear_x2(sigmoid(readout(S2_att)))   # 1 x S x S
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops
from .attention import DEFAULT_POSITION_CAP, SelfAttention, pooled_attention
from .autograd import Parameter, Tensor, no_grad
from .layers import Conv2d, ConvTranspose2x, Module
from .rcl import RclUnit

VGG_WIDTHS = (64, 128, 256, 512, 512)
VGG_DEPTHS = (2, 2, 3, 3, 3)


@dataclass
class NetConfig:
    input_size: int = 64
    width_mult: float = 0.125
    rcl_channels: int = 16
    rcl_t_steps: int = 3
    decoder_channels: int = 16
    c1_divisor: int = 8
    attention_position_cap: int = DEFAULT_POSITION_CAP
    seed: int = 0
    precision: int = 64

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.input_size < 16 or self.input_size % 16:
            raise ValueError(f"input_size must be a positive multiple of 16, got {self.input_size}")
        if not 0 < self.width_mult <= 1:
            raise ValueError(f"width_mult must lie in (0, 1], got {self.width_mult}")
        for key in ("rcl_channels", "decoder_channels", "c1_divisor", "attention_position_cap"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.rcl_t_steps < 0:
            raise ValueError(f"rcl_t_steps must be >= 0, got {self.rcl_t_steps}")
        if self.precision not in (32, 64):
            raise ValueError(f"precision must be 32 or 64, got {self.precision}")

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    @property
    def widths(self) -> tuple:
        return tuple(max(1, int(round(w * self.width_mult))) for w in VGG_WIDTHS)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown NetConfig keys: {sorted(unknown)}")
        return cls(**d)


class StageError(ValueError):
    """Shape inconsistency inside the decoder, tagged with the stage."""


class Backbone(Module):
    def __init__(self, cfg: NetConfig, dtype):
        self.blocks = []
        c_in = 3
        for b, (width, depth) in enumerate(zip(cfg.widths, VGG_DEPTHS), start=1):
            block = []
            for i in range(1, depth + 1):
                block.append(Conv2d(f"backbone.conv{b}_{i}", c_in, width, 3, dtype=dtype))
                c_in = width
            self.blocks.append(_Seq(block))

    def __call__(self, image: Tensor):
        taps = []
        x = image
        for b, block in enumerate(self.blocks):
            if b > 0:
                x = ops.maxpool2x2(x)
            for conv in block.layers:
                x = ops.relu(conv(x))
            taps.append(x)
        return taps[1], taps[2], taps[3], taps[4]


class _Seq(Module):
    def __init__(self, layers):
        self.layers = list(layers)


class DecoderStage(Module):
    """One ARN level: upsample the coarser attended map, enhance the side
    output with an RCL, fuse, attend."""

    def __init__(self, level: int, cfg: NetConfig, c_coarse: int, c_side: int, dtype):
        d, r = cfg.decoder_channels, cfg.rcl_channels
        self.level = level
        self.up = ConvTranspose2x(f"decoder.up{level}", c_coarse, d, dtype=dtype)
        self.adapter = Conv2d(f"decoder.adapter{level}", c_side, r, 3, dtype=dtype)
        self.rcl = RclUnit(f"decoder.rcl{level}", r, r, cfg.rcl_t_steps, dtype=dtype)
        self.fuse = Conv2d(f"decoder.fuse{level}", d + r, d, 3, dtype=dtype)
        self.att = SelfAttention(
            f"decoder.att{level}", d, cfg.c1_divisor, cfg.attention_position_cap, dtype=dtype
        )

    def enhance(self, side: Tensor) -> Tensor:
        return self.rcl(ops.relu(self.adapter(side)))

    def __call__(self, coarse: Tensor, side: Tensor, attend: bool = True) -> Tensor:
        up = self.up(coarse)
        if up.shape[1:] != side.shape[1:]:
            raise StageError(
                f"stage {self.level}: upsampled map {up.shape} does not match side output {side.shape}"
            )
        fused = ops.relu(self.fuse(ops.concat_channels(up, self.enhance(side))))
        return _attend(self.att, fused) if attend else fused


def _attend(att: SelfAttention, x: Tensor) -> Tensor:
    y, _ = pooled_attention(x, att)
    return y


class SaliencyModel(Module):
    """The full saliency network for one :class:`NetConfig`.

    Parameters are created zeroed; call :meth:`init_parameters` (done by the
    constructor when ``init=True``) to draw them from ``config.seed``.
    """

    def __init__(self, config: Optional[NetConfig] = None, init: bool = True):
        cfg = config if config is not None else NetConfig()
        cfg.validate()
        self.config = cfg
        dtype = cfg.dtype
        w = cfg.widths
        d = cfg.decoder_channels
        self.backbone = Backbone(cfg, dtype)
        self.att5 = SelfAttention("decoder.att5", w[4], cfg.c1_divisor, cfg.attention_position_cap, dtype=dtype)
        self.stage4 = DecoderStage(4, cfg, w[4], w[3], dtype)
        self.stage3 = DecoderStage(3, cfg, d, w[2], dtype)
        self.stage2 = DecoderStage(2, cfg, d, w[1], dtype)
        self.readout = Conv2d("decoder.readout", d, 1, 1, pad=0, dtype=dtype)
        names = [p.name for p in self.named_parameters()]
        if len(names) != len(set(names)):
            raise AssertionError("duplicate parameter names")
        if init:
            self.init_parameters(cfg.seed)

    def init_parameters(self, seed: Optional[int] = None) -> None:
        """Xavier-uniform weights from ``seed``; every bias and gamma set to 0."""
        rng = np.random.default_rng(self.config.seed if seed is None else seed)
        super().init_parameters(rng)

    def parameter_dict(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.named_parameters()}

    def attention_modules(self) -> list[SelfAttention]:
        return [self.att5, self.stage4.att, self.stage3.att, self.stage2.att]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.named_parameters())

    # -- forward --------------------------------------------------------------

    def _as_input(self, image) -> Tensor:
        t = image if isinstance(image, Tensor) else Tensor(image, dtype=self.config.dtype)
        if t.dtype != self.config.dtype:
            t = Tensor(t.data, dtype=self.config.dtype)
        s = self.config.input_size
        if t.shape != (3, s, s):
            raise ValueError(f"model expects a 3x{s}x{s} image, got {t.shape}")
        return t

    def backbone_forward(self, image) -> tuple:
        return self.backbone(self._as_input(image))

    def arn_forward(self, l2: Tensor, l3: Tensor, l4: Tensor, s5: Tensor, attention: bool = True) -> Tensor:
        expected = self.trace_shapes()
        for stage, key, t in ((5, "S5", s5), (4, "L4", l4), (3, "L3", l3), (2, "L2", l2)):
            if t.shape != expected[key]:
                raise StageError(f"stage {stage}: {key} has shape {t.shape}, expected {expected[key]}")
        s5_att = _attend(self.att5, s5) if attention else s5
        s4 = self.stage4(s5_att, l4, attention)
        s3 = self.stage3(s4, l3, attention)
        s2 = self.stage2(s3, l2, attention)
        return ops.upsample_bilinear2x(ops.sigmoid(self.readout(s2)))

    def __call__(self, image, attention: bool = True) -> Tensor:
        return self.arn_forward(*self.backbone_forward(image), attention=attention)

    def predict(self, image) -> np.ndarray:
        """Saliency map as a numpy array, without recording a tape."""
        with no_grad():
            return self(image).data.copy()

    # -- structural shape trace -------------------------------------------------

    def trace_shapes(self) -> dict:
        """Shapes of every tapped map, derived from the layer definitions alone."""
        cfg = self.config
        s = cfg.input_size
        w = cfg.widths
        d = cfg.decoder_channels
        shapes = {}
        size = s
        for b, block in enumerate(self.backbone.blocks, start=1):
            if b > 1:
                if size % 2:
                    raise StageError(f"block {b}: odd extent {size} before pooling")
                size //= 2
            c = 3 if b == 1 else w[b - 2]
            for conv in block.layers:
                o, ci, k, _ = conv.weight.shape
                if ci != c:
                    raise StageError(f"block {b}: channel mismatch {ci} vs {c}")
                size = ops.conv_out_size(size, k, 1, conv.pad)
                c = o
            shapes[f"conv{b}"] = (c, size, size)
        shapes["L2"], shapes["L3"], shapes["L4"], shapes["S5"] = (
            shapes["conv2"], shapes["conv3"], shapes["conv4"], shapes["conv5"])
        shapes["S5_att"] = shapes["S5"]
        coarse = shapes["S5_att"]
        for k, stage in ((4, self.stage4), (3, self.stage3), (2, self.stage2)):
            up = (stage.up.weight.shape[1], coarse[1] * 2, coarse[2] * 2)
            side = shapes[f"L{k}"]
            if up[1:] != side[1:]:
                raise StageError(f"stage {k}: upsampled {up} vs side output {side}")
            shapes[f"U{k}"] = up
            shapes[f"R{k}"] = (stage.rcl.channels,) + side[1:]
            shapes[f"S{k}_att"] = (d,) + side[1:]
            coarse = shapes[f"S{k}_att"]
        shapes["output"] = (1, coarse[1] * 2, coarse[2] * 2)
        return shapes


def backbone_forward(image, model: SaliencyModel):
    return model.backbone_forward(image)


def arn_forward(l2, l3, l4, s5, model: SaliencyModel) -> Tensor:
    return model.arn_forward(l2, l3, l4, s5)


def model_forward(image, model: SaliencyModel) -> Tensor:
    return model(image)


def init_parameters(model: SaliencyModel, seed: int) -> None:
    model.init_parameters(seed)
