"""Symmetric crop windows and the border-proximity update rule.

Crop windows are integer top-left corners; all frames of a prediction
window share one crop (symmetric crops). Windows are shifted, never
shrunk, to stay inside the frame. The crop is re-centered when a
prediction comes closer than the border margin to any crop edge; a
config flag flips this to the literal "farther than margin" reading.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class CropPolicy:
    crop_size: tuple[int, int] = (256, 256)
    border_margin: int = 30
    border_rule: str = "proximity"  # "proximity" (intended) or "exceeds" (literal)

    def __post_init__(self):
        if isinstance(self.crop_size, int):
            object.__setattr__(self, "crop_size", (self.crop_size, self.crop_size))
        if self.border_rule not in ("proximity", "exceeds"):
            raise ValueError(f"unknown border_rule {self.border_rule!r}")


def clamp_window(center, crop_size: tuple[int, int], frame_shape: tuple[int, int]) -> np.ndarray:
    """Top-left (u0, v0) of a crop centered at ``center``, clamped in-bounds."""
    ch, cw = crop_size
    fh, fw = frame_shape
    if ch > fh or cw > fw:
        raise ValueError(f"crop {crop_size} larger than frame {frame_shape}")
    u0 = int(round(float(center[0]) - cw / 2))
    v0 = int(round(float(center[1]) - ch / 2))
    return np.array([min(max(u0, 0), fw - cw), min(max(v0, 0), fh - ch)], dtype=np.int64)


def crop_frames(frames: np.ndarray, window, crop_size: tuple[int, int]) -> np.ndarray:
    """Crop (n, h, w) frames (or one frame) to the shared window."""
    ch, cw = crop_size
    u0, v0 = int(window[0]), int(window[1])
    if frames.ndim == 2:
        return frames[v0 : v0 + ch, u0 : u0 + cw]
    return frames[:, v0 : v0 + ch, u0 : u0 + cw]


def full_to_crop(coords: np.ndarray, window) -> np.ndarray:
    return np.asarray(coords, dtype=np.float64) - np.asarray(window, dtype=np.float64)


def crop_to_full(coords: np.ndarray, window) -> np.ndarray:
    return np.asarray(coords, dtype=np.float64) + np.asarray(window, dtype=np.float64)


def border_distance(coord, crop_size: tuple[int, int]) -> float:
    """Distance of a crop-pixel coordinate to the nearest crop edge."""
    ch, cw = crop_size
    u, v = float(coord[0]), float(coord[1])
    return min(u, v, cw - u, ch - v)


def needs_crop_update(predictions_crop: np.ndarray, policy: CropPolicy) -> bool:
    dists = [border_distance(c, policy.crop_size) for c in np.atleast_2d(predictions_crop)]
    if policy.border_rule == "proximity":
        return min(dists) < policy.border_margin
    return min(dists) > policy.border_margin


def update_crop(state, predictions_crop: np.ndarray, policy: CropPolicy):
    """Re-center the crop on the prediction midpoint when the rule triggers.

    ``state`` is a TrackState; history is kept in full-frame coordinates,
    so moving the window never loses the points it refers to.
    """
    predictions_crop = np.atleast_2d(np.asarray(predictions_crop, dtype=np.float64))
    if not needs_crop_update(predictions_crop, policy):
        return state
    center_full = crop_to_full(predictions_crop, state.crop_window).mean(axis=0)
    new_window = clamp_window(center_full, policy.crop_size, state.frame_shape)
    return replace(state, crop_window=new_window)
