"""Masked video pretraining with a supplementary vesselness decoder."""

from .attention import (
    MultiHeadAttention,
    SpaceTimeEncoder,
    TransformerBlock,
    joint_space_time_attention,
    patchify,
    space_time_pos_embed,
    unpatchify,
)
from .losses import loss_pretrain, loss_reco, loss_weak
from .masking import MaskPlan, build_mask_plan
from .model import MaskedVideoAutoencoder, forward_pretrain
from .pretrain import pretrain

__all__ = [
    "MaskPlan",
    "MaskedVideoAutoencoder",
    "MultiHeadAttention",
    "SpaceTimeEncoder",
    "TransformerBlock",
    "build_mask_plan",
    "forward_pretrain",
    "joint_space_time_attention",
    "loss_pretrain",
    "loss_reco",
    "loss_weak",
    "patchify",
    "pretrain",
    "space_time_pos_embed",
    "unpatchify",
]
