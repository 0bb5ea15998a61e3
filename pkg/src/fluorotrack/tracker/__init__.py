"""History-guided multi-instance landmark tracker."""

from .losses import loss_downstream, loss_heatmap, make_heatmap_target, soft_dice
from .model import (
    AuxiliaryDecoder,
    CrossAttentionBlock,
    HeatmapHead,
    HistoryGuidedTracker,
    mca_decode,
)
from .peaks import extract_instances
from .tokens import TrajectoryEmbedding, build_correlation_tokens, gather_appearance

__all__ = [
    "AuxiliaryDecoder",
    "CrossAttentionBlock",
    "HeatmapHead",
    "HistoryGuidedTracker",
    "TrajectoryEmbedding",
    "build_correlation_tokens",
    "extract_instances",
    "gather_appearance",
    "loss_downstream",
    "loss_heatmap",
    "make_heatmap_target",
    "mca_decode",
    "soft_dice",
]
