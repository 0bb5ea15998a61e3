"""Joint space-time attention and the shared token encoder.

All frames' tokens are concatenated into one sequence and attended
jointly; there is no temporal blocking. Positional information is fixed
sinusoidal, separable into a spatial (row/col) and a temporal part.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn


def joint_space_time_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                               num_heads: int = 1, return_weights: bool = False):
    """Scaled dot-product attention over the full space-time token sequence.

    Inputs are ``(L, d)`` or ``(B, L, d)``. Each head computes
    ``softmax(q k^T / sqrt(d_head)) v``; head outputs are concatenated.
    Any learned mixing lives in the calling module.
    """
    squeeze = q.dim() == 2
    if squeeze:
        q, k, v = q[None], k[None], v[None]
    if k.shape != v.shape:
        raise ValueError(f"K/V shape mismatch: {tuple(k.shape)} vs {tuple(v.shape)}")
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"Q/K dim mismatch: {q.shape[-1]} vs {k.shape[-1]}")
    b, lq, dim = q.shape
    if dim % num_heads:
        raise ValueError(f"dim {dim} not divisible by {num_heads} heads")
    dh = dim // num_heads

    def split(x):
        return x.reshape(b, x.shape[1], num_heads, dh).transpose(1, 2)  # (B, H, L, dh)

    qh, kh, vh = split(q), split(k), split(v)
    logits = qh @ kh.transpose(-2, -1) / math.sqrt(dh)
    weights = torch.softmax(logits, dim=-1)
    out = (weights @ vh).transpose(1, 2).reshape(b, lq, dim)
    if squeeze:
        out = out[0]
        weights = weights[0]
    return (out, weights) if return_weights else out


class MultiHeadAttention(nn.Module):
    """Projections + joint attention + output mix; optional cross context."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.to_q = nn.Linear(dim, dim)
        self.to_k = nn.Linear(dim, dim)
        self.to_v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x, context=None):
        ctx = x if context is None else context
        attended = joint_space_time_attention(
            self.to_q(x), self.to_k(ctx), self.to_v(ctx), self.num_heads
        )
        return self.out(attended)


class FeedForward(nn.Module):
    def __init__(self, dim: int, ratio: int = 4):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, dim * ratio), nn.GELU(), nn.Linear(dim * ratio, dim))

    def forward(self, x):
        return self.net(x)


class TransformerBlock(nn.Module):
    """Pre-norm self-attention + MLP with residuals."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim, mlp_ratio)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


def sincos_1d(positions: np.ndarray, dim: int) -> np.ndarray:
    """Fixed sinusoidal features: dim/2 sines then dim/2 cosines."""
    if dim % 2:
        raise ValueError("sincos dim must be even")
    half = dim // 2
    freqs = 1.0 / (10000.0 ** (np.arange(half, dtype=np.float64) / half))
    args = np.asarray(positions, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def space_time_pos_embed(num_frames: int, grid_h: int, grid_w: int, dim: int) -> torch.Tensor:
    """Separable positional table (num_frames*grid_h*grid_w, dim).

    Spatial part: dim/2 from the row index, dim/2 from the column index;
    temporal part: full-dim encoding of the frame index, added on top.
    """
    if dim % 4:
        raise ValueError("dim must be divisible by 4 for separable encodings")
    rows = sincos_1d(np.arange(grid_h), dim // 2)
    cols = sincos_1d(np.arange(grid_w), dim // 2)
    spatial = np.concatenate(
        [np.repeat(rows, grid_w, axis=0), np.tile(cols, (grid_h, 1))], axis=1
    )  # (gh*gw, dim)
    temporal = sincos_1d(np.arange(num_frames), dim)  # (n, dim)
    table = spatial[None, :, :] + temporal[:, None, :]
    return torch.from_numpy(table.reshape(num_frames * grid_h * grid_w, dim)).float()


def patchify(frames: torch.Tensor, patch: int = 16) -> torch.Tensor:
    """(B, n, h, w) -> (B, n*gh*gw, patch*patch), frame-major token order."""
    b, n, h, w = frames.shape
    if h % patch or w % patch:
        raise ValueError(f"frame size {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    x = frames.reshape(b, n, gh, patch, gw, patch)
    x = x.permute(0, 1, 2, 4, 3, 5).reshape(b, n * gh * gw, patch * patch)
    return x


def unpatchify(tokens: torch.Tensor, num_frames: int, h: int, w: int, patch: int = 16) -> torch.Tensor:
    """(B, n*gh*gw, patch*patch) -> (B, n, h, w)."""
    b = tokens.shape[0]
    gh, gw = h // patch, w // patch
    x = tokens.reshape(b, num_frames, gh, gw, patch, patch)
    x = x.permute(0, 1, 2, 4, 3, 5).reshape(b, num_frames, h, w)
    return x


class SpaceTimeEncoder(nn.Module):
    """Patch embedding + joint space-time attention blocks.

    The caller supplies already-gathered patch vectors and their matching
    positional rows, so masked-token subsets never enter the computation.
    """

    def __init__(self, dim: int, depth: int, num_heads: int, patch: int = 16):
        super().__init__()
        self.dim = dim
        self.patch = patch
        self.patch_embed = nn.Linear(patch * patch, dim)
        self.blocks = nn.ModuleList(TransformerBlock(dim, num_heads) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)

    def forward(self, patches: torch.Tensor, pos: torch.Tensor) -> torch.Tensor:
        x = self.patch_embed(patches) + pos
        for block in self.blocks:
            x = block(x)
        return self.norm(x)

    def encode_clip(self, frames: torch.Tensor) -> torch.Tensor:
        """Encode full (unmasked) frames: (B, n, h, w) -> (B, n*gh*gw, dim)."""
        b, n, h, w = frames.shape
        pos = space_time_pos_embed(n, h // self.patch, w // self.patch, self.dim)
        pos = pos.to(dtype=frames.dtype, device=frames.device)
        return self(patchify(frames, self.patch), pos)
