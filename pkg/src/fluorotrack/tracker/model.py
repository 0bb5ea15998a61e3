"""Tracker network: pretrained encoder, cross-attention decoder, heatmap head.

All frames of a symmetric-crop window are encoded jointly (no masking).
Current-frame tokens query the correlation tokens built from past-frame
features and predicted coordinates; a small convolutional head upsamples
the decoded tokens back to crop resolution as a heatmap. An optional
auxiliary decoder predicts the catheter body mask from the same tokens.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..mvae.attention import FeedForward, MultiHeadAttention, SpaceTimeEncoder
from .peaks import extract_instances
from .tokens import TrajectoryEmbedding, build_correlation_tokens


class CrossAttentionBlock(nn.Module):
    """Pre-norm self-attention, cross-attention to correlation tokens, MLP."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, num_heads)
        self.norm_query = nn.LayerNorm(dim)
        self.norm_context = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, num_heads)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim, mlp_ratio)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        x = x + self.self_attn(self.norm_self(x))
        x = x + self.cross_attn(self.norm_query(x), context=self.norm_context(context))
        x = x + self.mlp(self.norm_mlp(x))
        return x


def mca_decode(blocks, current: torch.Tensor, correlation: torch.Tensor) -> torch.Tensor:
    """Run cross-attention blocks; correlation tokens are keys/values."""
    if correlation.shape[-2] == 0:
        raise ValueError("empty correlation sequence: need at least one past frame (window >= 2)")
    x = current
    for block in blocks:
        x = block(x, correlation)
    return x


class HeatmapHead(nn.Module):
    """2 conv layers + 4 progressive 2x upsampling convs + sigmoid.

    Upsampling recovers exactly the 16-pixel token stride, so the output
    matches the crop resolution.
    """

    def __init__(self, dim: int, channels: int = 32):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(dim, channels, 3, padding=1), nn.GELU(),
            nn.Conv2d(channels, channels, 3, padding=1), nn.GELU(),
        )
        stages = []
        for _ in range(4):
            stages += [nn.Upsample(scale_factor=2, mode="nearest"),
                       nn.Conv2d(channels, channels, 3, padding=1), nn.GELU()]
        self.upsample = nn.Sequential(*stages)
        self.final = nn.Conv2d(channels, 1, 1)
        # start sigmoid outputs low but unsaturated: with sparse dice targets a
        # zero-bias start collapses to all-background and the gradient dies
        nn.init.constant_(self.final.bias, -2.0)

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        """(B, gh, gw, dim) -> (B, 16*gh, 16*gw) in [0, 1]."""
        x = grid.permute(0, 3, 1, 2)
        x = self.upsample(self.stem(x))
        return torch.sigmoid(self.final(x))[:, 0]


class AuxiliaryDecoder(nn.Module):
    """Self-attention stack + upsampling head for dense auxiliary masks."""

    def __init__(self, dim: int, num_heads: int, depth: int = 1, channels: int = 32):
        super().__init__()
        from ..mvae.attention import TransformerBlock

        self.blocks = nn.ModuleList(TransformerBlock(dim, num_heads) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)
        self.head = HeatmapHead(dim, channels)

    def forward(self, tokens: torch.Tensor, grid_hw: tuple[int, int]) -> torch.Tensor:
        x = tokens
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        b, _, d = x.shape
        return self.head(x.reshape(b, grid_hw[0], grid_hw[1], d))


class HistoryGuidedTracker(nn.Module):
    def __init__(self, dim: int = 64, encoder_depth: int = 4, num_heads: int = 4,
                 mca_depth: int = 2, patch: int = 16, heatmap_channels: int = 32,
                 appearance_k: int = 3, use_appearance: bool = True,
                 use_trajectory: bool = True, with_aux: bool = False):
        super().__init__()
        self.dim = dim
        self.patch = patch
        self.appearance_k = appearance_k
        self.use_appearance = use_appearance
        self.use_trajectory = use_trajectory
        self.encoder = SpaceTimeEncoder(dim, encoder_depth, num_heads, patch)
        self.trajectory = TrajectoryEmbedding(dim)
        self.mca = nn.ModuleList(CrossAttentionBlock(dim, num_heads) for _ in range(mca_depth))
        self.mca_norm = nn.LayerNorm(dim)
        self.head = HeatmapHead(dim, heatmap_channels)
        self.aux = AuxiliaryDecoder(dim, num_heads, channels=heatmap_channels) if with_aux else None

    def config_dims(self) -> dict:
        return {
            "dim": self.dim,
            "encoder_depth": len(self.encoder.blocks),
            "num_heads": self.encoder.blocks[0].attn.num_heads,
            "mca_depth": len(self.mca),
            "patch": self.patch,
            "heatmap_channels": self.head.final.in_channels,
            "appearance_k": self.appearance_k,
            "use_appearance": self.use_appearance,
            "use_trajectory": self.use_trajectory,
            "with_aux": self.aux is not None,
        }

    def forward_window(self, crops: torch.Tensor, history: torch.Tensor):
        """Batched window forward.

        crops: (B, n, h, w) symmetric crops, most recent last;
        history: (B, n-1, K, 2) predicted (u, v) per past frame, crop pixels.
        Returns (heatmaps (B, h, w), aux masks (B, h, w) or None).
        """
        b, n, h, w = crops.shape
        if n < 2:
            raise ValueError("window must contain at least 2 frames")
        if history.shape[:2] != (b, n - 1):
            raise ValueError(f"history shape {tuple(history.shape)} does not match window {n}")
        gh, gw = h // self.patch, w // self.patch
        features = self.encoder.encode_clip(crops).reshape(b, n, gh, gw, self.dim)
        current = features[:, -1].reshape(b, gh * gw, self.dim)

        contexts = []
        for i in range(b):
            corr = build_correlation_tokens(
                features[i, :-1], history[i], self.trajectory, (h, w),
                k=self.appearance_k, patch=self.patch,
                use_appearance=self.use_appearance, use_trajectory=self.use_trajectory,
            )
            if corr.shape[0] == 0:
                corr = current[i]  # both token families disabled: fall back to self tokens
            contexts.append(corr)
        context = torch.stack(contexts)

        decoded = mca_decode(self.mca, current, context)
        decoded = self.mca_norm(decoded)
        heatmaps = self.head(decoded.reshape(b, gh, gw, self.dim))
        aux_maps = self.aux(current, (gh, gw)) if self.aux is not None else None
        return heatmaps, aux_maps


@torch.no_grad()
def forward_track(model: HistoryGuidedTracker, crops, history, num_instances: int,
                  cca_threshold: float = 0.5):
    """Single-window inference: heatmap, instance coordinates, aux prediction.

    crops: (n, h, w) array; history: (n-1, K, 2) crop-pixel coordinates.
    Returns (heatmap (h, w), coords (K, 2), peak values, low_confidence, aux).
    """
    model.eval()
    crops_t = torch.from_numpy(np.ascontiguousarray(crops, dtype=np.float32))[None]
    history_t = torch.from_numpy(np.ascontiguousarray(history, dtype=np.float32))[None]
    if history_t.shape[2] != num_instances:
        raise ValueError(f"history has {history_t.shape[2]} instances, expected {num_instances}")
    heatmaps, aux_maps = model.forward_window(crops_t, history_t)
    heatmap = heatmaps[0].numpy()
    coords, values, low_conf = extract_instances(heatmap, num_instances, cca_threshold)
    aux = aux_maps[0].numpy() if aux_maps is not None else None
    return heatmap, coords, values, low_conf, aux
