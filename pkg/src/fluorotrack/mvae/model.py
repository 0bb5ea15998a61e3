"""Dual-decoder masked video autoencoder.

The encoder sees only visible tokens. Encoded tokens are projected to a
lower dimension and scattered back into the full grid, with one of two
learnable mask tokens (one per decoder) filling the masked slots before
positional encodings are re-added. The reconstruction decoder predicts
pixels; the weak-label decoder predicts the offline vesselness maps.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .attention import SpaceTimeEncoder, TransformerBlock, patchify, space_time_pos_embed, unpatchify
from .masking import MaskPlan


class MaskedVideoAutoencoder(nn.Module):
    def __init__(self, dim: int = 64, dim_lo: int = 32, encoder_depth: int = 4,
                 decoder_depth: int = 2, num_heads: int = 4, patch: int = 16):
        super().__init__()
        self.dim = dim
        self.dim_lo = dim_lo
        self.patch = patch
        self.encoder = SpaceTimeEncoder(dim, encoder_depth, num_heads, patch)
        self.projector = nn.Linear(dim, dim_lo)
        self.mask_token_reco = nn.Parameter(torch.zeros(dim_lo))
        self.mask_token_weak = nn.Parameter(torch.zeros(dim_lo))
        nn.init.normal_(self.mask_token_reco, std=0.02)
        nn.init.normal_(self.mask_token_weak, std=0.02)
        self.decoder_reco = nn.ModuleList(TransformerBlock(dim_lo, num_heads) for _ in range(decoder_depth))
        self.decoder_weak = nn.ModuleList(TransformerBlock(dim_lo, num_heads) for _ in range(decoder_depth))
        self.norm_reco = nn.LayerNorm(dim_lo)
        self.norm_weak = nn.LayerNorm(dim_lo)
        self.head_reco = nn.Linear(dim_lo, patch * patch)
        self.head_weak = nn.Linear(dim_lo, patch * patch)

    def config_dims(self) -> dict:
        return {
            "dim": self.dim,
            "dim_lo": self.dim_lo,
            "encoder_depth": len(self.encoder.blocks),
            "decoder_depth": len(self.decoder_reco),
            "num_heads": self.encoder.blocks[0].attn.num_heads,
            "patch": self.patch,
        }

    def encode_visible(self, frames: torch.Tensor, plan: MaskPlan) -> torch.Tensor:
        """Run the encoder over visible tokens only: (B, |visible|, dim)."""
        b, n, h, w = frames.shape
        gh, gw = h // self.patch, w // self.patch
        if gh * gw != plan.tokens_per_frame or n != plan.num_frames:
            raise ValueError(
                f"plan geometry ({plan.num_frames} x {plan.tokens_per_frame}) does not match "
                f"clip ({n} x {gh * gw})"
            )
        patches = patchify(frames, self.patch)
        pos = space_time_pos_embed(n, gh, gw, self.dim).to(dtype=frames.dtype, device=frames.device)
        visible = torch.from_numpy(plan.visible_flat).to(frames.device)
        return self.encoder(patches[:, visible], pos[visible])

    def forward_pretrain(self, frames: torch.Tensor, plan: MaskPlan) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, n, h, w) -> reconstruction and weak-label maps, both (B, n, h, w)."""
        b, n, h, w = frames.shape
        gh, gw = h // self.patch, w // self.patch
        z = self.projector(self.encode_visible(frames, plan))
        visible = torch.from_numpy(plan.visible_flat).to(frames.device)
        masked = torch.from_numpy(plan.masked_flat).to(frames.device)
        total = plan.total_tokens
        pos_lo = space_time_pos_embed(n, gh, gw, self.dim_lo).to(dtype=frames.dtype, device=frames.device)

        outputs = []
        for mask_token, blocks, norm, head in (
            (self.mask_token_reco, self.decoder_reco, self.norm_reco, self.head_reco),
            (self.mask_token_weak, self.decoder_weak, self.norm_weak, self.head_weak),
        ):
            full = torch.zeros(b, total, self.dim_lo, dtype=frames.dtype, device=frames.device)
            if len(visible):
                full = full.index_copy(1, visible, z)
            if len(masked):
                fill = mask_token.to(frames.dtype).expand(b, len(masked), self.dim_lo)
                full = full.index_copy(1, masked, fill)
            x = full + pos_lo
            for block in blocks:
                x = block(x)
            outputs.append(unpatchify(head(norm(x)), n, h, w, self.patch))
        return outputs[0], outputs[1]


def forward_pretrain(model: MaskedVideoAutoencoder, clip, plan: MaskPlan):
    """Clip-level wrapper: checks weak labels and geometry, returns (n,h,w) maps."""
    if clip.weak_labels is None:
        raise ValueError("clip has no weak vesselness labels; run the offline labeler first")
    frames = torch.from_numpy(np.ascontiguousarray(clip.frames, dtype=np.float32))[None]
    recon, weak_pred = model.forward_pretrain(frames, plan)
    return recon[0], weak_pred[0]
