"""Tracker losses: soft dice on heatmaps plus weighted auxiliary dice terms."""

from __future__ import annotations

import numpy as np
import torch

DICE_EPS = 1e-6


def soft_dice(target: torch.Tensor, pred: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """1 - 2*sum(G*z) / (sum(G^2) + sum(z^2) + eps)."""
    if target.shape != pred.shape:
        raise ValueError(f"shape mismatch: {tuple(target.shape)} vs {tuple(pred.shape)}")
    inter = (target * pred).sum()
    denom = (target**2).sum() + (pred**2).sum() + eps
    return 1.0 - 2.0 * inter / denom


def loss_heatmap(target: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
    """Soft dice between the Gaussian ground-truth map and the predicted heatmap."""
    return soft_dice(target, pred)


def loss_downstream(target, pred, aux_targets=None, aux_preds=None, weights=None):
    """Heatmap dice plus weighted auxiliary dice terms.

    ``aux_targets``/``aux_preds`` are aligned lists; a ``None`` target
    (frame without that annotation) contributes 0 to its term.
    """
    total = loss_heatmap(target, pred)
    if not aux_targets:
        return total
    if weights is None or len(weights) != len(aux_targets) or len(aux_preds) != len(aux_targets):
        raise ValueError("auxiliary targets, predictions and weights must align")
    for aux_t, aux_p, weight in zip(aux_targets, aux_preds, weights):
        if aux_t is None:
            continue
        total = total + weight * soft_dice(aux_t, aux_p)
    return total


def make_heatmap_target(shape: tuple[int, int], coords: np.ndarray, sigma: float = 2.0) -> np.ndarray:
    """Gaussian blob per instance, max-combined, peak 1 at each coordinate."""
    h, w = shape
    target = np.zeros((h, w))
    ys, xs = np.mgrid[0:h, 0:w]
    for u, v in np.atleast_2d(coords):
        blob = np.exp(-((xs - u) ** 2 + (ys - v) ** 2) / (2.0 * sigma**2))
        np.maximum(target, blob, out=target)
    return target
