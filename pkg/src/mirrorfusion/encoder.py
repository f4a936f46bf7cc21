"""Multi-scale feature extractor: five stride-2 stages with two tap points.

Stage 2 provides the low-level features (1/4 resolution); stage 5 runs through
a dilated pyramid (multi-rate context pooling) to give the high-level features
at 1/32 resolution, i.e. low is always exactly 8x the resolution of high.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import EncoderConfig
from .errors import ShapeError
from .nn import Conv2d, Module, ModuleList
from .tensor import Tensor


@dataclass
class FeaturePair:
    low: Tensor       # [C_low, H/4, W/4]
    high: Tensor      # [C_high, H/32, W/32]
    frame_id: int = -1


class AtrousPyramid(Module):
    """Parallel context branches: 1x1 conv, one 3x3 dilated conv per rate, and a
    pooled branch; concatenated on channels and fused by a 1x1 conv.

    Spatial size is preserved for every rate (padding = rate for k=3).
    """

    def __init__(self, in_channels: int, out_channels: int, rates, rng):
        super().__init__()
        self.rates = tuple(rates)
        self.point = Conv2d(in_channels, out_channels, 1, rng=rng)
        self.dilated = ModuleList(
            Conv2d(in_channels, out_channels, 3, rng=rng, padding=r, dilation=r)
            for r in self.rates
        )
        self.pool_proj = Conv2d(in_channels, out_channels, 1, rng=rng)
        n_branches = 2 + len(self.rates)
        self.fuse = Conv2d(n_branches * out_channels, out_channels, 1, rng=rng)

    def pool_branch(self, x: Tensor) -> Tensor:
        h, w = x.shape[1], x.shape[2]
        pooled = T.relu(self.pool_proj(T.global_avg_pool(x)))
        return T.upsample_bilinear(pooled, h, w)

    def __call__(self, x: Tensor) -> Tensor:
        branches = [T.relu(self.point(x))]
        branches += [T.relu(conv(x)) for conv in self.dilated]
        branches.append(self.pool_branch(x))
        return T.relu(self.fuse(T.concat(branches, axis=0)))


class Encoder(Module):
    """Stand-in backbone exposing the same two taps a pretrained one would."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        stages = []
        c_in = 3
        for c_out in cfg.stage_channels:
            stages.append(Conv2d(c_in, c_out, 3, rng=rng, stride=2, padding=1))
            c_in = c_out
        self.stages = ModuleList(stages)
        self.aspp = AtrousPyramid(cfg.stage_channels[4], cfg.aspp_out_channels,
                                  cfg.aspp_rates, rng)

    def __call__(self, image: Tensor, frame_id: int = -1) -> FeaturePair:
        if image.ndim != 3 or image.shape[0] != 3:
            raise ShapeError(f"encoder expects a [3,H,W] image, got {image.shape}")
        h, w = image.shape[1], image.shape[2]
        if h % 32 or w % 32:
            raise ShapeError(f"image dims must be divisible by 32, got {h}x{w}")
        x = image
        low = None
        for i, stage in enumerate(self.stages):
            x = T.relu(stage(x))
            if i == 1:
                low = x
        return FeaturePair(low=low, high=self.aspp(x), frame_id=frame_id)


def encode(image: Tensor, cfg: EncoderConfig, rng=None, encoder: Encoder | None = None,
           frame_id: int = -1) -> FeaturePair:
    """Functional entry point; builds a seeded encoder when none is supplied."""
    if encoder is None:
        encoder = Encoder(cfg, rng if rng is not None else np.random.default_rng(0))
    return encoder(image, frame_id=frame_id)


def encoder_parameter_count(cfg: EncoderConfig) -> int:
    """Closed-form parameter count for Encoder (weights + biases)."""
    total = 0
    c_in = 3
    for c_out in cfg.stage_channels:
        total += c_out * c_in * 9 + c_out
        c_in = c_out
    ch, co = cfg.stage_channels[4], cfg.aspp_out_channels
    total += co * ch + co                       # 1x1 branch
    total += len(cfg.aspp_rates) * (co * ch * 9 + co)
    total += co * ch + co                       # pooled branch projection
    total += co * (co * (2 + len(cfg.aspp_rates))) + co   # fusion
    return total
