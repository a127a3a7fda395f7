"""Dice objectives and pixel-level evaluation metrics."""

from __future__ import annotations

import numpy as np
import torch
from scipy.stats import rankdata

from .config import LossWeights
from .core import DimensionError


def dice_loss(pred: torch.Tensor, target: torch.Tensor, smooth: float = 1.0) -> torch.Tensor:
    """``1 - (2 sum(p*y) + s) / (sum(p) + sum(y) + s)`` per sample, averaged over the batch.

    The leading axis is the batch; everything else is summed.
    """
    if pred.shape != target.shape:
        raise DimensionError("dice_loss", "shape", f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    target = target.to(pred.dtype)
    if pred.dim() == 0:
        pred, target = pred.reshape(1, 1), target.reshape(1, 1)
    p = pred.reshape(pred.shape[0], -1)
    y = target.reshape(target.shape[0], -1)
    inter = (p * y).sum(dim=1)
    denom = p.sum(dim=1) + y.sum(dim=1)
    return (1.0 - (2.0 * inter + smooth) / (denom + smooth)).mean()


def combined_loss(s_seg, s_edge, mask, edge, weights: LossWeights | None = None, smooth: float = 1.0):
    """Convex combination of the segmentation and edge Dice terms.

    Returns ``(total, {"seg": ..., "edge": ...})``; the edge term is computed
    at the edge map's own (quarter) resolution.
    """
    weights = weights or LossWeights()
    weights.validate()
    seg = dice_loss(s_seg, mask, smooth)
    edge_term = dice_loss(s_edge, edge, smooth)
    total = weights.gamma_r * seg + weights.gamma_e * edge_term
    return total, {"seg": seg, "edge": edge_term}


def _np(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x)


def confusion(pred, gt, threshold: float = 0.5) -> tuple[int, int, int, int]:
    p = _np(pred).ravel() >= threshold
    g = _np(gt).ravel() > 0.5
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    tn = int(np.sum(~p & ~g))
    return tp, fp, fn, tn


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def pixel_f1(pred, gt, threshold: float = 0.5) -> float:
    """F1 of ``pred >= threshold`` against a binary mask.

    Both empty gives 1.0; exactly one empty gives 0.0.
    """
    tp, fp, fn, _ = confusion(pred, gt, threshold)
    return f1_from_counts(tp, fp, fn)


def pixel_auc(pred, gt) -> float | None:
    """ROC AUC via the Mann-Whitney rank statistic, ties counting one half.

    Returns ``None`` when ``gt`` contains a single class.
    """
    scores = _np(pred).astype(np.float64).ravel()
    labels = _np(gt).ravel() > 0.5
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def image_score(s_seg) -> float:
    """Image-level manipulation score: the maximum pixel probability."""
    return float(_np(s_seg).max())


def nanmean_optional(values) -> float | None:
    kept = [v for v in values if v is not None]
    return float(np.mean(kept)) if kept else None
