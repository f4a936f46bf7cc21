"""Short/long fusion, the decoding head and the full three-frame network.

Per frame triple (prev, t, n): adjacent-pair attention enhances prev/t at both
feature levels, distant-pair attention extracts long-range context for t/n,
and the current frame's enhanced features are reweighted by that context
before decoding.  One decoder head is shared by all three frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import SAParams, la_block, sa_block, sa_params_parameter_count
from .config import TrainConfig
from .encoder import Encoder, FeaturePair, encoder_parameter_count
from .errors import ShapeError
from .gating import (DualGatedAttention, channel_gate_parameter_count,
                     fusion_parameter_count, spatial_gate_parameter_count)
from .nn import Conv2d, Module
from .tensor import Tensor


@dataclass
class FusedFeatures:
    e_fuse: Tensor   # [C,H,W], same shape as the short-term features


@dataclass
class PredictionSet:
    p_prev: Tensor        # [1,H,W] probabilities in (0,1)
    p_t: Tensor
    p_n: Tensor
    logit_prev: Tensor    # pre-sigmoid maps, kept for the hinge loss
    logit_t: Tensor
    logit_n: Tensor


def slf_fuse(e_short: Tensor, r_long: Tensor, gate_conv: Conv2d) -> FusedFeatures:
    """Weight short-term features by a long-term gate, keeping a residual path:
    e_fuse = e_short * sigmoid(conv1x1(r_long)) + e_short."""
    if e_short.shape != r_long.shape:
        raise ShapeError(f"fusion inputs disagree: {e_short.shape} vs {r_long.shape}")
    gate = T.sigmoid(gate_conv(r_long))
    return FusedFeatures(e_fuse=e_short * gate + e_short)


class DecoderHead(Module):
    """Merge the two levels and emit a full-resolution probability map."""

    def __init__(self, low_channels: int, high_channels: int, hidden: int,
                 rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(low_channels + high_channels, hidden, 3, rng=rng, padding=1)
        self.conv2 = Conv2d(hidden, hidden, 3, rng=rng, padding=1)
        self.head = Conv2d(hidden, 1, 1, rng=rng)

    def __call__(self, low: Tensor, high: Tensor) -> tuple[Tensor, Tensor]:
        lh, lw = low.shape[1], low.shape[2]
        if lh != 8 * high.shape[1] or lw != 8 * high.shape[2]:
            raise ShapeError(f"low {low.shape} must be 8x the resolution of high {high.shape}")
        x = T.concat([low, T.upsample_bilinear(high, lh, lw)], axis=0)
        x = T.relu(self.conv1(x))
        x = T.relu(self.conv2(x))
        logits = T.upsample_bilinear(self.head(x), 4 * lh, 4 * lw)
        return T.sigmoid(logits), logits


def decode(low: Tensor, high: Tensor, head: DecoderHead) -> Tensor:
    """Probability map for one frame (spec-level entry point)."""
    p, _ = head(low, high)
    return p


class MirrorDetectionNet(Module):
    """The full three-frame mirror segmentation network.

    Toggles mirror the ablation rows: use_attention=False leaves only the
    encoder+decoder baseline; use_dgsa_gates=False drops the gate blocks
    (plain cross-attention); use_slf=False decodes the current frame from its
    enhanced short-term features alone.
    """

    def __init__(self, cfg: TrainConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        enc = cfg.encoder
        self.encoder = Encoder(enc, rng)
        levels = (enc.low_channels, enc.high_channels)
        if cfg.use_attention:
            self.sa_low = SAParams(levels[0], rng)
            self.sa_high = SAParams(levels[1], rng)
            self.la_low = SAParams(levels[0], rng)
            self.la_high = SAParams(levels[1], rng)
            self.dgsa_low = DualGatedAttention(levels[0], rng, use_gates=cfg.use_dgsa_gates)
            self.dgsa_high = DualGatedAttention(levels[1], rng, use_gates=cfg.use_dgsa_gates)
            # distant-frame branch: fold its context back into the frame features
            self.n_fuse_low = Conv2d(2 * levels[0], levels[0], 3, rng=rng, padding=1)
            self.n_fuse_high = Conv2d(2 * levels[1], levels[1], 3, rng=rng, padding=1)
            if cfg.use_slf:
                if cfg.slf_levels == "both":
                    self.slf_gate_low = Conv2d(levels[0], levels[0], 1, rng=rng)
                self.slf_gate_high = Conv2d(levels[1], levels[1], 1, rng=rng)
        hidden = 2 * enc.base_channels
        self.decoder = DecoderHead(levels[0], levels[1], hidden, rng)

    # -- forward ------------------------------------------------------------
    def forward(self, i_prev: Tensor, i_t: Tensor, i_n: Tensor) -> PredictionSet:
        if not (i_prev.shape == i_t.shape == i_n.shape):
            raise ShapeError("the three frames must share one shape")
        cfg = self.cfg
        f_prev = self.encoder(i_prev, frame_id=0)
        f_t = self.encoder(i_t, frame_id=1)
        f_n = self.encoder(i_n, frame_id=2)

        if not cfg.use_attention:
            p_prev, l_prev = self.decoder(f_prev.low, f_prev.high)
            p_t, l_t = self.decoder(f_t.low, f_t.high)
            p_n, l_n = self.decoder(f_n.low, f_n.high)
            return PredictionSet(p_prev, p_t, p_n, l_prev, l_t, l_n)

        passes = cfg.attention_passes
        sa_lo = sa_block(f_prev.low, f_t.low, self.sa_low, passes=passes)
        sa_hi = sa_block(f_prev.high, f_t.high, self.sa_high, passes=passes)
        short_lo = self.dgsa_low(f_prev.low, f_t.low, sa_lo)
        short_hi = self.dgsa_high(f_prev.high, f_t.high, sa_hi)

        la_lo = la_block(f_t.low, f_n.low, self.la_low, passes=passes)
        la_hi = la_block(f_t.high, f_n.high, self.la_high, passes=passes)

        if cfg.use_slf:
            if cfg.slf_levels == "both":
                t_low = slf_fuse(short_lo.e_b, la_lo.r_b, self.slf_gate_low).e_fuse
            else:
                t_low = short_lo.e_b
            t_high = slf_fuse(short_hi.e_b, la_hi.r_b, self.slf_gate_high).e_fuse
        else:
            t_low, t_high = short_lo.e_b, short_hi.e_b

        n_low = self.n_fuse_low(T.concat([f_n.low, la_lo.r_a], axis=0))
        n_high = self.n_fuse_high(T.concat([f_n.high, la_hi.r_a], axis=0))

        p_prev, l_prev = self.decoder(short_lo.e_a, short_hi.e_a)
        p_t, l_t = self.decoder(t_low, t_high)
        p_n, l_n = self.decoder(n_low, n_high)
        return PredictionSet(p_prev, p_t, p_n, l_prev, l_t, l_n)


def model_forward(net: MirrorDetectionNet, i_prev: Tensor, i_t: Tensor,
                  i_n: Tensor) -> PredictionSet:
    return net.forward(i_prev, i_t, i_n)


def expected_parameter_count(cfg: TrainConfig) -> int:
    """Closed-form parameter count for every toggle configuration."""
    enc = cfg.encoder
    levels = (enc.low_channels, enc.high_channels)
    total = encoder_parameter_count(enc)
    hidden = 2 * enc.base_channels
    total += hidden * (levels[0] + levels[1]) * 9 + hidden     # decoder conv1
    total += hidden * hidden * 9 + hidden                      # decoder conv2
    total += hidden + 1                                        # 1x1 logit head
    if cfg.use_attention:
        for c in levels:
            total += 2 * sa_params_parameter_count(c)          # short + long blocks
            total += fusion_parameter_count(c)
            total += c * 2 * c * 9 + c                         # distant-frame fusion
            if cfg.use_dgsa_gates:
                total += spatial_gate_parameter_count(c)
                total += channel_gate_parameter_count(c)
        if cfg.use_slf:
            if cfg.slf_levels == "both":
                total += levels[0] * levels[0] + levels[0]
            total += levels[1] * levels[1] + levels[1]
    return total
