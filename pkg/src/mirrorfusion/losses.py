"""Training objective: convex Jaccard surrogate (hinge form) plus BCE, summed
over the three supervised frames."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

BCE_EPS = 1e-7


def jaccard_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Gradient vector of the Jaccard set function along sorted hinge errors.

    With no foreground labels the union grows from false positives alone,
    which makes the first slot carry all the weight.
    """
    gt = np.asarray(gt_sorted, dtype=np.float64)
    pos = gt.sum()
    intersection = pos - np.cumsum(gt)
    union = pos + np.cumsum(1.0 - gt)
    jac = 1.0 - intersection / union
    if gt.size > 1:
        jac[1:] = jac[1:] - jac[:-1]
    return jac


def lovasz_hinge(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Hinge-form Jaccard surrogate on a flat vector of pre-sigmoid logits.

    Hinge errors are sorted descending (stable, so ties break by position) and
    dotted with the Jaccard gradient of the sorted labels; backward flows
    through the fixed sort permutation.
    """
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if logits.size != labels.size or logits.size < 1:
        raise ShapeError(f"logits/labels size mismatch: {logits.size} vs {labels.size}")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")
    flat = logits.reshape(-1)
    signs = 2.0 * labels - 1.0
    errors = T.relu(1.0 - flat * Tensor(signs.astype(flat.data.dtype)))
    perm = np.argsort(-errors.data, kind="stable")
    grad_vec = jaccard_grad(labels[perm]).astype(flat.data.dtype)
    return T.tsum(T.gather(errors, 0, perm) * Tensor(grad_vec))


def bce(p: Tensor, g: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on probabilities, clamped to [eps, 1-eps]."""
    g = np.asarray(g, dtype=np.float64)
    if tuple(p.shape) != g.shape:
        raise ShapeError(f"prediction/target shapes disagree: {p.shape} vs {g.shape}")
    gt = Tensor(g.astype(p.data.dtype))
    pc = T.clamp(p, BCE_EPS, 1.0 - BCE_EPS)
    ll = gt * T.log(pc) + (1.0 - gt) * T.log(1.0 - pc)
    return -ll.mean()


def total_loss(preds, gts) -> Tensor:
    """Sum over the three frames of hinge(flattened logits) + bce(probabilities).

    ``gts`` is a (prev, t, n) triple of binary [1,H,W] masks (arrays or
    GroundTruthMask).
    """
    masks = [np.asarray(getattr(g, "mask", g)) for g in gts]
    pairs = [(preds.logit_prev, preds.p_prev, masks[0]),
             (preds.logit_t, preds.p_t, masks[1]),
             (preds.logit_n, preds.p_n, masks[2])]
    loss = None
    for logit, p, mask in pairs:
        term = lovasz_hinge(logit, mask.reshape(-1)) + bce(p, mask)
        loss = term if loss is None else loss + term
    return loss
