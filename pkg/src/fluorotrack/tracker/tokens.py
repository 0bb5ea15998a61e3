"""Correlation tokens: past-frame appearance crops and trajectory embeddings.

Each past frame contributes, per tracked instance, a k x k crop of its
feature grid centered at that frame's predicted coordinate plus one
embedded coordinate token. Tokens are concatenated instance-major, with
each instance's frames interleaved appearance-then-trajectory.
"""

from __future__ import annotations

import torch
from torch import nn

from ..mvae.attention import sincos_1d


def coordinate_features(coords_norm: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of normalized (u, v): dim/2 per axis, concatenated.

    Positions are scaled by 128 before the standard sinusoid so that
    pixel-scale coordinate differences land on distinct phases.
    """
    if dim % 4:
        raise ValueError("dim must be divisible by 4")
    import numpy as np

    half = dim // 2
    flat = coords_norm.reshape(-1, 2).detach().cpu().numpy() * 128.0
    feat_u = sincos_1d(flat[:, 0], half)
    feat_v = sincos_1d(flat[:, 1], half)
    feats = np.concatenate([feat_u, feat_v], axis=1)
    out = torch.from_numpy(feats).to(dtype=coords_norm.dtype, device=coords_norm.device)
    return out.reshape(*coords_norm.shape[:-1], dim)


class TrajectoryEmbedding(nn.Module):
    """Crop-pixel coordinate -> token: clamp, normalize, sinusoid, linear."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.proj = nn.Linear(dim, dim)

    def forward(self, coords: torch.Tensor, crop_size: tuple[int, int]) -> torch.Tensor:
        """coords (..., 2) as (u, v) in crop pixels; crop_size is (h, w)."""
        h, w = crop_size
        u = coords[..., 0].clamp(0, w - 1) / w
        v = coords[..., 1].clamp(0, h - 1) / h
        feats = coordinate_features(torch.stack([u, v], dim=-1), self.dim)
        return self.proj(feats)


def gather_appearance(feature_grid: torch.Tensor, center, k: int = 3, patch: int = 16) -> torch.Tensor:
    """k*k feature tokens around the token cell containing ``center``.

    ``feature_grid`` is (gh, gw, d); ``center`` is (u, v) in crop pixels.
    Cells outside the grid are zero-padded. Returns (k*k, d), row-major
    over the neighborhood.
    """
    gh, gw, d = feature_grid.shape
    cu = int(min(max(float(center[0]), 0.0) // patch, gw - 1))
    cv = int(min(max(float(center[1]), 0.0) // patch, gh - 1))
    half = k // 2
    out = feature_grid.new_zeros(k * k, d)
    for i, dv in enumerate(range(-half, k - half)):
        for j, du in enumerate(range(-half, k - half)):
            r, c = cv + dv, cu + du
            if 0 <= r < gh and 0 <= c < gw:
                out[i * k + j] = feature_grid[r, c]
    return out


def build_correlation_tokens(past_features: torch.Tensor, history: torch.Tensor,
                             traj_embed: TrajectoryEmbedding, crop_size: tuple[int, int],
                             k: int = 3, patch: int = 16,
                             use_appearance: bool = True, use_trajectory: bool = True) -> torch.Tensor:
    """Assemble the cross-attention key/value sequence from past frames.

    past_features: (n_past, gh, gw, d); history: (n_past, K, 2) crop pixels.
    Returns (M, d); M = 0 when both token families are disabled.
    """
    n_past, gh, gw, d = past_features.shape
    if history.shape[0] != n_past:
        raise ValueError(f"history covers {history.shape[0]} frames, features {n_past}")
    pieces = []
    for inst in range(history.shape[1]):
        for i in range(n_past):
            if use_appearance:
                pieces.append(gather_appearance(past_features[i], history[i, inst], k, patch))
            if use_trajectory:
                pieces.append(traj_embed(history[i, inst], crop_size)[None])
    if not pieces:
        return past_features.new_zeros(0, d)
    return torch.cat(pieces, dim=0)
