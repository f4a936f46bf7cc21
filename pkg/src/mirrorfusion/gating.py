"""Dual-gated refinement of cross-frame attention features.

The concatenated correspondence features drive two gates: a spatial mask per
frame (where to trust the correspondence) and a channel mask per frame (which
feature channels to trust).  Gated features refine the original frame features
through a 3x3 fusion conv, added back residually.  The fusion convs start at
zero so the block initially passes the attention output through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionOutput
from .errors import ShapeError
from .nn import Conv2d, Module
from .tensor import Tensor


@dataclass
class GateMasks:
    s_a: Tensor   # [1,H,W] in (0,1)
    s_b: Tensor   # [1,H,W]
    c_a: Tensor   # [C,1,1] in (0,1)
    c_b: Tensor   # [C,1,1]


@dataclass
class DgsaOutput:
    e_a: Tensor                  # enhanced features, frame a
    e_b: Tensor                  # enhanced features, frame b
    d_a: Tensor                  # dual-gated features (intermediates kept for tests)
    d_b: Tensor
    g_a: Tensor                  # refined features out of the fusion conv
    g_b: Tensor
    masks: GateMasks | None


class SpatialGate(Module):
    """3x3 conv to two channels -> sigmoid -> one [1,H,W] mask per frame."""

    def __init__(self, channels_2c: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(channels_2c, 2, 3, rng=rng, padding=1)

    def __call__(self, r_cat: Tensor) -> tuple[Tensor, Tensor]:
        m = T.sigmoid(self.conv(r_cat))
        return T.slice_axis(m, 0, 0, 1), T.slice_axis(m, 0, 1, 2)


class ChannelGate(Module):
    """Pooled two-layer 1x1 bottleneck (reduction 4, floor 1) -> sigmoid masks."""

    def __init__(self, channels_2c: int, rng: np.random.Generator):
        super().__init__()
        hidden = max(channels_2c // 4, 1)
        self.squeeze = Conv2d(channels_2c, hidden, 1, rng=rng)
        self.expand = Conv2d(hidden, channels_2c, 1, rng=rng)

    def __call__(self, r_cat: Tensor) -> tuple[Tensor, Tensor]:
        c = r_cat.shape[0] // 2
        m = T.sigmoid(self.expand(T.relu(self.squeeze(T.global_avg_pool(r_cat)))))
        return T.slice_axis(m, 0, 0, c), T.slice_axis(m, 0, c, 2 * c)


def apply_gates(r: Tensor, s: Tensor, c: Tensor) -> Tensor:
    """Dual-gated features: correspondence * spatial mask * channel mask."""
    return r * s * c


class DualGatedAttention(Module):
    """Gate, refine and fuse the two frames' correspondence features.

    With use_gates=False the gate blocks are not built and the gated features
    equal the raw correspondence features (the plain cross-attention ablation).
    """

    def __init__(self, channels: int, rng: np.random.Generator, use_gates: bool = True):
        super().__init__()
        self.channels = channels
        self.use_gates = use_gates
        if use_gates:
            self.spatial_gate = SpatialGate(2 * channels, rng)
            self.channel_gate = ChannelGate(2 * channels, rng)
        self.fusion_a = Conv2d(2 * channels, channels, 3, padding=1, zero_init=True)
        self.fusion_b = Conv2d(2 * channels, channels, 3, padding=1, zero_init=True)

    def __call__(self, f_a: Tensor, f_b: Tensor, sa: AttentionOutput,
                 gate_override: float | None = None) -> DgsaOutput:
        if f_a.shape != f_b.shape or f_a.shape != sa.r_a.shape:
            raise ShapeError(f"feature/attention shapes disagree: {f_a.shape}, "
                             f"{f_b.shape}, {sa.r_a.shape}")
        masks = None
        if gate_override is not None:
            if gate_override == 1.0:
                d_a, d_b = sa.r_a, sa.r_b   # multiplying by exact 1.0 masks is a no-op
            else:
                g = Tensor(np.full((1, 1, 1), gate_override))
                d_a = sa.r_a * g * g
                d_b = sa.r_b * g * g
        elif self.use_gates:
            r_cat = T.concat([sa.r_a, sa.r_b], axis=0)
            s_a, s_b = self.spatial_gate(r_cat)
            c_a, c_b = self.channel_gate(r_cat)
            masks = GateMasks(s_a=s_a, s_b=s_b, c_a=c_a, c_b=c_b)
            d_a = apply_gates(sa.r_a, s_a, c_a)
            d_b = apply_gates(sa.r_b, s_b, c_b)
        else:
            d_a, d_b = sa.r_a, sa.r_b
        g_a = self.fusion_a(T.concat([f_a, d_a], axis=0))
        g_b = self.fusion_b(T.concat([f_b, d_b], axis=0))
        return DgsaOutput(e_a=sa.r_a + g_a, e_b=sa.r_b + g_b,
                          d_a=d_a, d_b=d_b, g_a=g_a, g_b=g_b, masks=masks)


def dgsa_forward(f_a: Tensor, f_b: Tensor, sa: AttentionOutput,
                 block: DualGatedAttention, gate_override: float | None = None) -> DgsaOutput:
    return block(f_a, f_b, sa, gate_override=gate_override)


def spatial_gate_parameter_count(channels: int) -> int:
    return 2 * (2 * channels) * 9 + 2


def channel_gate_parameter_count(channels: int) -> int:
    c2 = 2 * channels
    hidden = max(c2 // 4, 1)
    return hidden * c2 + hidden + c2 * hidden + c2


def fusion_parameter_count(channels: int) -> int:
    return 2 * (channels * 2 * channels * 9 + channels)
