"""Cross-frame attention along criss-cross key sets.

Each query position in the current frame attends to its own row and column in
both frames.  The current frame contributes H+W-1 keys (its row/column
intersection counted once); the other frame contributes H+W keys (the aligned
cell appears in both its row scan and its column scan), for exactly 2H+2W-1
keys total.  One softmax over that full key axis yields the attention map;
per-frame learnable scalars weight the two aggregated outputs.

The same block serves adjacent-frame (short-term) and distant-frame
(long-term) pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module, scalar_param
from .errors import ShapeError
from .tensor import Tensor


@dataclass
class AttentionOutput:
    r_a: Tensor      # aggregated values from frame a, [C,H,W]
    r_b: Tensor      # aggregated values from frame b (the query frame), [C,H,W]
    attn: Tensor     # [(H*W), 2H+2W-1]; frame-b key columns first


def criss_cross_keys(h: int, w: int, p: tuple[int, int]) -> list[tuple[str, int, int]]:
    """Ordered key list for query position p = (row, col).

    Order: frame-b row left-to-right, frame-b column top-to-bottom skipping p,
    frame-a row, frame-a full column (the aligned cell stays in both scans so
    the list length is exactly 2h+2w-1).
    """
    row, col = p
    if not (0 <= row < h and 0 <= col < w):
        raise IndexError(f"position {p} outside {h}x{w} grid")
    keys = [("b", row, j) for j in range(w)]
    keys += [("b", i, col) for i in range(h) if i != row]
    keys += [("a", row, j) for j in range(w)]
    keys += [("a", i, col) for i in range(h)]
    return keys


_KEY_INDEX_CACHE: dict = {}


def build_key_indices(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Flattened key positions per query: ([HW, h+w-1] frame-b, [HW, h+w] frame-a)."""
    cached = _KEY_INDEX_CACHE.get((h, w))
    if cached is not None:
        return cached
    q = np.arange(h * w)
    qi, qj = q // w, q % w
    row_idx = qi[:, None] * w + np.arange(w)[None, :]          # [HW, w]
    col_all = np.arange(h)[None, :] * w + qj[:, None]          # [HW, h]
    keep = np.arange(h)[None, :] != qi[:, None]
    col_skip = col_all[keep].reshape(h * w, h - 1)             # own row removed
    idx_b = np.concatenate([row_idx, col_skip], axis=1)
    idx_a = np.concatenate([row_idx, col_all], axis=1)
    _KEY_INDEX_CACHE[(h, w)] = (idx_b, idx_a)
    return idx_b, idx_a


class SAParams(Module):
    """Projections and output scalars for one attention block.

    Queries come from frame b only; each frame has its own key/value 1x1
    projections.  omega_a / omega_b start at zero so the block is initially a
    no-op downstream (residual-style warm start).
    """

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.channels = channels
        self.query = Conv2d(channels, channels, 1, rng=rng, bias=False)
        self.key_a = Conv2d(channels, channels, 1, rng=rng, bias=False)
        self.key_b = Conv2d(channels, channels, 1, rng=rng, bias=False)
        self.value_a = Conv2d(channels, channels, 1, rng=rng, bias=False)
        self.value_b = Conv2d(channels, channels, 1, rng=rng, bias=False)
        self.omega_a = scalar_param(0.0)
        self.omega_b = scalar_param(0.0)


def sa_params_parameter_count(channels: int) -> int:
    return 5 * channels * channels + 2


def _attend(f_a: Tensor, f_b: Tensor, params: SAParams) -> AttentionOutput:
    c, h, w = f_a.shape
    hw = h * w
    idx_b, idx_a = build_key_indices(h, w)
    n_b, n_a = idx_b.shape[1], idx_a.shape[1]

    q = params.query(f_b).reshape(c, hw)
    k_a = params.key_a(f_a).reshape(c, hw)
    k_b = params.key_b(f_b).reshape(c, hw)
    v_a = params.value_a(f_a).reshape(c, hw)
    v_b = params.value_b(f_b).reshape(c, hw)

    q3 = q.reshape(c, hw, 1)
    scale = 1.0 / math.sqrt(c)
    e_b = T.tsum(q3 * T.gather(k_b, 1, idx_b), axis=0) * scale   # [HW, n_b]
    e_a = T.tsum(q3 * T.gather(k_a, 1, idx_a), axis=0) * scale   # [HW, n_a]
    attn = T.softmax(T.concat([e_b, e_a], axis=1), axis=1)

    a_b = T.slice_axis(attn, 1, 0, n_b).reshape(1, hw, n_b)
    a_a = T.slice_axis(attn, 1, n_b, n_b + n_a).reshape(1, hw, n_a)
    agg_b = T.tsum(a_b * T.gather(v_b, 1, idx_b), axis=2).reshape(c, h, w)
    agg_a = T.tsum(a_a * T.gather(v_a, 1, idx_a), axis=2).reshape(c, h, w)
    return AttentionOutput(r_a=params.omega_a * agg_a,
                           r_b=params.omega_b * agg_b,
                           attn=attn)


def sa_block(f_a: Tensor, f_b: Tensor, params: SAParams, passes: int = 1) -> AttentionOutput:
    """Cross-frame attention with queries from f_b.

    With passes=2 the block is applied again to the residually enriched pair
    (f + r) using the same parameters; the second pass's outputs are returned.
    """
    if f_a.shape != f_b.shape:
        raise ShapeError(f"frame shapes disagree: {f_a.shape} vs {f_b.shape}")
    if f_a.ndim != 3:
        raise ShapeError(f"expected [C,H,W] features, got {f_a.shape}")
    out = _attend(f_a, f_b, params)
    for _ in range(passes - 1):
        out = _attend(f_a + out.r_a, f_b + out.r_b, params)
    return out


def la_block(f_t: Tensor, f_n: Tensor, params: SAParams, passes: int = 1) -> AttentionOutput:
    """Distant-pair variant: queries from the current frame t.

    Returns r_b = the current frame's long-range context, r_a = the distant
    frame's counterpart.
    """
    return sa_block(f_n, f_t, params, passes=passes)
