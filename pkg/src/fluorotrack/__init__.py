"""Fluoroscopy device tracking at desk scale.

Synthetic phantom data, masked video pretraining with a supplementary
vesselness decoder, a history-guided multi-instance landmark tracker,
and the metrics/ablation harness tying them together.
"""

__version__ = "0.1.0"
