"""Segmentation metrics, windowed structural similarity and the dataset-level
first-frame similarity score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


@dataclass
class GroundTruthMask:
    mask: np.ndarray   # [1,H,W], strictly {0,1}

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.float32)
        if not np.isin(self.mask, (0.0, 1.0)).all():
            raise ValueError("ground-truth mask must be strictly binary")


@dataclass
class MetricsReport:
    iou: float
    f_beta: float
    accuracy: float
    mae: float
    frame_count: int


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return np.asarray(x.data, dtype=np.float64)
    if isinstance(x, GroundTruthMask):
        return np.asarray(x.mask, dtype=np.float64)
    return np.asarray(x, dtype=np.float64)


def _counts(pred: np.ndarray, gt: np.ndarray, threshold: float):
    hard = pred >= threshold
    pos = gt >= 0.5
    tp = int(np.count_nonzero(hard & pos))
    fp = int(np.count_nonzero(hard & ~pos))
    fn = int(np.count_nonzero(~hard & pos))
    tn = int(np.count_nonzero(~hard & ~pos))
    return tp, fp, fn, tn


def _scores(tp, fp, fn, tn, beta_sq):
    union = tp + fp + fn
    iou = 1.0 if union == 0 else tp / union      # empty-vs-empty counts as perfect
    precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    denom = beta_sq * precision + recall
    f_beta = 0.0 if denom == 0 else (1.0 + beta_sq) * precision * recall / denom
    accuracy = (tp + tn) / (tp + fp + fn + tn)
    return iou, f_beta, accuracy


def compute_metrics(preds, gts, threshold: float = 0.5, beta_sq: float = 0.3,
                    aggregate: str = "pooled") -> MetricsReport:
    """IoU, weighted F-measure, pixel accuracy and MAE over aligned mask pairs.

    "pooled" (default) pools pixel counts over the whole set before scoring;
    "per_frame" scores each pair and averages.
    """
    if len(preds) == 0 or len(preds) != len(gts):
        raise ValueError(f"need equal, nonzero prediction/mask counts, "
                         f"got {len(preds)} vs {len(gts)}")
    if aggregate not in ("pooled", "per_frame"):
        raise ValueError(f"unknown aggregate mode {aggregate!r}")
    pairs = []
    for p, g in zip(preds, gts):
        pa, ga = _as_array(p), _as_array(g)
        if pa.shape != ga.shape:
            raise ShapeError(f"prediction {pa.shape} vs mask {ga.shape}")
        pairs.append((pa, ga))

    abs_err = sum(float(np.abs(pa - ga).sum()) for pa, ga in pairs)
    n_pix = sum(pa.size for pa, _ in pairs)
    mae = abs_err / n_pix

    if aggregate == "pooled":
        tp = fp = fn = tn = 0
        for pa, ga in pairs:
            a, b, c, d = _counts(pa, ga, threshold)
            tp, fp, fn, tn = tp + a, fp + b, fn + c, tn + d
        iou, f_beta, accuracy = _scores(tp, fp, fn, tn, beta_sq)
    else:
        per = [_scores(*_counts(pa, ga, threshold), beta_sq) for pa, ga in pairs]
        iou = float(np.mean([s[0] for s in per]))
        f_beta = float(np.mean([s[1] for s in per]))
        accuracy = float(np.mean([s[2] for s in per]))
    return MetricsReport(iou=iou, f_beta=f_beta, accuracy=accuracy, mae=mae,
                         frame_count=len(pairs))


def format_metrics(report: MetricsReport) -> str:
    """Four-column line, IoU / F_beta / Accuracy / MAE."""
    return (f"{report.iou:.4f} / {report.f_beta:.4f} / "
            f"{report.accuracy:.4f} / {report.mae:.4f}")


def metrics_kv(report: MetricsReport) -> str:
    return (f"iou={report.iou:.6f}\nf_beta={report.f_beta:.6f}\n"
            f"accuracy={report.accuracy:.6f}\nmae={report.mae:.6f}\n"
            f"frames={report.frame_count}\n")


# -- structural similarity ----------------------------------------------------

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def _gaussian_1d(size: int = _SSIM_WINDOW, sigma: float = _SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with a 1-D kernel applied to both axes."""
    from numpy.lib.stride_tricks import sliding_window_view
    tmp = sliding_window_view(img, k.size, axis=1) @ k        # (H, W-k+1)
    return sliding_window_view(tmp, k.size, axis=0) @ k       # (H-k+1, W-k+1)


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 255.0) -> float:
    """Mean windowed SSIM (11x11 Gaussian, sigma 1.5) over valid windows.

    Images smaller than the window fall back to single global statistics.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"ssim expects two equal 2-D images, got {a.shape} vs {b.shape}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    if min(a.shape) < _SSIM_WINDOW:
        mu_a, mu_b = a.mean(), b.mean()
        va, vb = a.var(), b.var()
        cov = ((a - mu_a) * (b - mu_b)).mean()
        return float(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                     / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2)))
    k = _gaussian_1d()
    mu_a = _filter_valid(a, k)
    mu_b = _filter_valid(b, k)
    s_aa = _filter_valid(a * a, k) - mu_a * mu_a
    s_bb = _filter_valid(b * b, k) - mu_b * mu_b
    s_ab = _filter_valid(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (s_aa + s_bb + c2)
    return float((num / den).mean())


def to_luminance(img: np.ndarray) -> np.ndarray:
    """[3,H,W] or [H,W,3] RGB in [0,255] -> [H,W] luma (ITU-R 601 weights)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[0] == 3:
        img = img.transpose(1, 2, 0)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an RGB image, got shape {img.shape}")
    return img @ np.array([0.299, 0.587, 0.114])


def dataset_similarity(first_frames: list, mode: str = "pairwise_mean") -> float:
    """Similarity percentage across videos' first frames.

    "pairwise_mean" (default) averages SSIM over all unordered pairs;
    "per_video_max" averages each frame's best match against the others.
    """
    if len(first_frames) < 2:
        raise ValueError("dataset similarity needs at least two videos")
    if mode not in ("pairwise_mean", "per_video_max"):
        raise ValueError(f"unknown similarity mode {mode!r}")
    lumas = [to_luminance(f) for f in first_frames]
    n = len(lumas)
    sim = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            sim[i, j] = sim[j, i] = ssim(lumas[i], lumas[j])
    if mode == "pairwise_mean":
        iu = np.triu_indices(n, k=1)
        return float(sim[iu].mean() * 100.0)
    best = [max(sim[i, j] for j in range(n) if j != i) for i in range(n)]
    return float(np.mean(best) * 100.0)
