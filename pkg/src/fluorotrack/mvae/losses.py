"""Pretraining losses over patch tokens.

Errors are accumulated per token as the sum of squared pixel differences
over that token's patch. The reconstruction loss averages tube-masked
tokens and adds the frame-masked sum scaled by |tube| / |frame|^2; the
weak-label loss averages over all tokens.
"""

from __future__ import annotations

import torch

from .attention import patchify
from .masking import MaskPlan


def _check_finite(name: str, *tensors: torch.Tensor) -> None:
    for t in tensors:
        if not torch.isfinite(t).all():
            raise ValueError(f"{name}: non-finite values in input")


def _token_sq_errors(target: torch.Tensor, pred: torch.Tensor, patch: int) -> torch.Tensor:
    """Per-token squared error, shape (B, n*gh*gw)."""
    if target.shape != pred.shape:
        raise ValueError(f"shape mismatch: {tuple(target.shape)} vs {tuple(pred.shape)}")
    if target.dim() == 3:
        target, pred = target[None], pred[None]
    diff = patchify(target, patch) - patchify(pred, patch)
    return (diff**2).sum(dim=-1)


def loss_reco(frames: torch.Tensor, recon: torch.Tensor, plan: MaskPlan, patch: int = 16) -> torch.Tensor:
    """Masked-token reconstruction loss; 0-valued second term when no frame masks."""
    _check_finite("loss_reco", frames, recon)
    errors = _token_sq_errors(frames, recon, patch)
    tube = torch.from_numpy(plan.tube_flat).to(errors.device)
    if len(tube) == 0:
        raise ValueError("mask plan has no tube-masked tokens")
    loss = errors[:, tube].sum(dim=1) / len(tube)
    frame = torch.from_numpy(plan.frame_flat).to(errors.device)
    if len(frame):
        loss = loss + errors[:, frame].sum(dim=1) * (len(tube) / len(frame) ** 2)
    return loss.mean()


def loss_weak(weak: torch.Tensor, weak_pred: torch.Tensor, patch: int = 16) -> torch.Tensor:
    """Mean over all tokens of per-patch squared error against the weak labels."""
    _check_finite("loss_weak", weak, weak_pred)
    errors = _token_sq_errors(weak, weak_pred, patch)
    return errors.mean(dim=1).mean()


def loss_pretrain(frames, recon, weak, weak_pred, plan: MaskPlan,
                  alpha: float = 1.0, beta: float = 1.0, patch: int = 16):
    """Weighted sum of reconstruction and weak-label losses plus the parts."""
    if alpha < 0 or beta < 0:
        raise ValueError("loss weights must be non-negative")
    reco = loss_reco(frames, recon, plan, patch)
    weak_term = loss_weak(weak, weak_pred, patch)
    return alpha * reco + beta * weak_term, reco, weak_term
