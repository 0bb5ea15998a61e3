"""Training-window sampling: 5 consecutive annotated frames, one shared crop.

On sparsely annotated sequences "consecutive" means consecutive in the
annotated subsequence; otherwise most sparse sequences would never yield
a valid window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..datasets import VideoClip
from .cropping import clamp_window, crop_frames, full_to_crop

log = logging.getLogger(__name__)


class SequenceTooShortError(ValueError):
    pass


@dataclass
class TrainingWindow:
    frames: np.ndarray        # (window, ch, cw)
    coords: np.ndarray        # (window, K, 2) crop pixels, ground truth
    frame_indices: np.ndarray
    crop_window: np.ndarray   # top-left (u0, v0)
    body_mask: np.ndarray | None  # (window, ch, cw) float or None


def sample_training_window(clip: VideoClip, rng: np.random.Generator, window: int = 5,
                           crop_size: tuple[int, int] = (256, 256)) -> TrainingWindow:
    """Sample a symmetric-crop window of ``window`` annotated frames.

    The crop is centered on the first sampled frame's annotation (instance
    midpoint), shifted to stay inside the frame.
    """
    annotated = clip.annotated_frames()
    if len(annotated) < window:
        raise SequenceTooShortError(
            f"sequence has {len(annotated)} annotated frames, need {window}"
        )
    start = int(rng.integers(len(annotated) - window + 1))
    frame_idx = annotated[start : start + window]
    center = clip.landmarks[frame_idx[0]].mean(axis=0)
    origin = clamp_window(center, crop_size, clip.frame_shape)
    frames = crop_frames(clip.frames[frame_idx], origin, crop_size)
    coords = full_to_crop(clip.landmarks[frame_idx], origin)
    body = None
    if clip.body_mask is not None:
        body = crop_frames(clip.body_mask[frame_idx], origin, crop_size).astype(np.float32)
    return TrainingWindow(
        frames=np.ascontiguousarray(frames, dtype=np.float32),
        coords=coords,
        frame_indices=frame_idx,
        crop_window=origin,
        body_mask=body,
    )


def iter_training_clips(clips: list[VideoClip], names: list[str], window: int):
    """Clips with enough annotated frames; short ones are skipped with a log line."""
    usable = []
    for name, clip in zip(names, clips):
        if len(clip.annotated_frames()) < window:
            log.warning("skipping %s: only %d annotated frames (< %d)",
                        name, len(clip.annotated_frames()), window)
            continue
        usable.append(clip)
    return usable
