"""Encoders, the fusion decoder with bin heads, and the student/teacher networks."""

from __future__ import annotations

from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from ..core import ops
from ..core.tensor import Tensor
from ..errors import ShapeError
from ..nn import Conv2d, ConvBnRelu, LayerNorm, Linear, Module, TransformerBlock, wrap_backbone_with_lgconv
from ..nn.attention import from_tokens, to_tokens
from .bins import bins_from_logits, depth_from_bins
from .config import ModelConfig

STRIDES = (4, 8, 16, 32)


def check_input(x: Tensor) -> None:
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"expected N x 3 x H x W images, got {x.shape}")
    h, w = x.shape[-2:]
    if h % 32 or w % 32:
        raise ShapeError(f"image size {h}x{w} must be divisible by 32")


class Stage(Module):
    def __init__(self, c_in: int, c_out: int, rng):
        super().__init__()
        self.conv0 = ConvBnRelu(c_in, c_out, stride=2, rng=rng)
        self.conv1 = ConvBnRelu(c_out, c_out, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv1(self.conv0(x))


class CnnEncoder(Module):
    """Stride-2 stem followed by four stride-2 stages (outputs at strides 4..32)."""

    def __init__(self, widths: Sequence[int], rng=None):
        super().__init__()
        self.widths = tuple(widths)
        self.stem = ConvBnRelu(3, widths[0], stride=2, rng=rng)
        c_prev = widths[0]
        self.stages = []
        for c in widths:
            self.stages.append(Stage(c_prev, c, rng))
            c_prev = c

    def forward(self, x: Tensor) -> List[Tensor]:
        check_input(x)
        h = self.stem(x)
        feats = []
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats


class TransformerStage(Module):
    def __init__(self, c_in: int, c_out: int, depth: int, heads: int, rng):
        super().__init__()
        self.embed = ConvBnRelu(c_in, c_out, stride=2, rng=rng)
        self.blocks = [TransformerBlock(c_out, heads=heads, mlp_ratio=2, rng=rng) for _ in range(depth)]
        self.norm = LayerNorm(c_out)

    def forward(self, x: Tensor) -> Tensor:
        x = self.embed(x)
        h, w = x.shape[-2:]
        t = to_tokens(x)
        for block in self.blocks:
            t = block(t)
        return from_tokens(self.norm(t), h, w)


class TransformerEncoder(Module):
    """Convolutional patch embedding per stage, then global self-attention blocks.

    A stage with depth 0 is a plain conv stage, which keeps the 1/4-resolution
    level affordable (hybrid layout: conv early, attention late).
    """

    def __init__(self, widths: Sequence[int], depths: Sequence[int], heads: int = 4, rng=None):
        super().__init__()
        self.widths = tuple(widths)
        self.stem = ConvBnRelu(3, widths[0], stride=2, rng=rng)
        c_prev = widths[0]
        self.stages = []
        for c, d in zip(widths, depths):
            self.stages.append(TransformerStage(c_prev, c, d, heads, rng) if d > 0 else Stage(c_prev, c, rng))
            c_prev = c

    def forward(self, x: Tensor) -> List[Tensor]:
        check_input(x)
        h = self.stem(x)
        feats = []
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats


class FuseStep(Module):
    def __init__(self, c_in: int, c_skip: int, d: int, rng):
        super().__init__()
        self.reduce = Conv2d(c_in, d, 1, padding=0, rng=rng)
        self.conv = Conv2d(d + c_skip, d, 3, rng=rng)

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        up = ops.upsample_nearest(self.reduce(x), 2)
        if up.shape[-2:] != skip.shape[-2:]:
            raise ShapeError(f"decoder: upsampled {up.shape} does not align with skip {skip.shape}")
        return ops.relu(self.conv(ops.concat([up, skip], axis=1)))


class BinPrediction(NamedTuple):
    depth: Tensor      # N x 1 x H x W (input resolution)
    widths: Tensor     # N x N_b
    centers: Tensor    # N x N_b
    probs: Tensor      # N x N_b x H/4 x W/4


class DepthDecoder(Module):
    """Top-down fusion of the four pyramid levels plus the two bin heads.

    This whole module is what the ghost decoder mirrors.
    """

    def __init__(self, widths: Sequence[int], cfg: ModelConfig, rng=None):
        super().__init__()
        d = cfg.decoder_channels
        self.widths = tuple(widths)
        self.cfg = cfg
        self.fuse = [FuseStep(widths[3], widths[2], d, rng),
                     FuseStep(d, widths[1], d, rng),
                     FuseStep(d, widths[0], d, rng)]
        self.center_fc1 = Linear(d, d, rng=rng, std=np.sqrt(2.0 / d))
        self.center_fc2 = Linear(d, cfg.n_bins, rng=rng)
        self.prob_head = Conv2d(d, cfg.n_bins, 1, padding=0, rng=rng)

    def decode(self, feats: Sequence[Tensor]) -> Tensor:
        if len(feats) != 4:
            raise ShapeError(f"decoder consumes exactly four pyramid levels, got {len(feats)}")
        for i, (f, c) in enumerate(zip(feats, self.widths)):
            if f.shape[1] != c:
                raise ShapeError(f"decoder: level {i + 1} has {f.shape[1]} channels, expected {c}")
        x = feats[3]
        for step, skip in zip(self.fuse, (feats[2], feats[1], feats[0])):
            x = step(x, skip)
        return x

    def heads(self, x: Tensor, out_size) -> BinPrediction:
        n = x.shape[0]
        pooled = ops.reshape(ops.avgpool_global(x), (n, x.shape[1]))
        logits = self.center_fc2(ops.relu(self.center_fc1(pooled)))
        widths, centers = bins_from_logits(logits, self.cfg.d_min, self.cfg.d_max, self.cfg.bin_eps)
        probs = ops.softmax(self.prob_head(x), axis=1)
        depth = depth_from_bins(probs, centers)
        depth = ops.resize_nearest(depth, out_size)
        return BinPrediction(depth, widths, centers, probs)

    def forward(self, feats: Sequence[Tensor], out_size=None) -> BinPrediction:
        x = self.decode(feats)
        if out_size is None:
            out_size = (x.shape[-2] * 4, x.shape[-1] * 4)
        return self.heads(x, out_size)


class ModelOutput(NamedTuple):
    features: List[Tensor]
    pred: BinPrediction


class StudentModel(Module):
    def __init__(self, cfg: ModelConfig, lg: bool = True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.lg = lg
        self.enc = CnnEncoder(cfg.student_widths, rng=rng)
        self.dec = DepthDecoder(cfg.student_widths, cfg, rng=rng)
        if lg:
            wrap_backbone_with_lgconv(self.enc, gamma0=cfg.gamma0, heads=cfg.lg_heads, rng=rng)

    @property
    def fingerprint(self) -> str:
        return self.cfg.student_fingerprint(self.lg)

    def forward(self, x: Tensor) -> ModelOutput:
        feats = self.enc(x)
        return ModelOutput(feats, self.dec(feats, out_size=x.shape[-2:]))


class TeacherModel(Module):
    def __init__(self, cfg: ModelConfig, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        if cfg.teacher_kind == "transformer":
            self.enc = TransformerEncoder(cfg.teacher_widths, cfg.teacher_depth, cfg.teacher_heads, rng=rng)
        else:
            self.enc = CnnEncoder(cfg.teacher_widths, rng=rng)
        self.dec = DepthDecoder(cfg.teacher_widths, cfg, rng=rng)

    @property
    def fingerprint(self) -> str:
        return self.cfg.teacher_fingerprint()

    def forward(self, x: Tensor) -> ModelOutput:
        feats = self.enc(x)
        return ModelOutput(feats, self.dec(feats, out_size=x.shape[-2:]))


def pyramid_shapes(widths: Sequence[int], h: int, w: int) -> List[tuple]:
    return [(c, h // s, w // s) for c, s in zip(widths, STRIDES)]
