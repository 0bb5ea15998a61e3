"""Per-sequence tracking: state, initialization, and the frame loop.

Frame 0's prediction is the initialization itself; each later frame
builds a symmetric-crop window over the most recent frames (repeating
frame 0 while the sequence is shorter than the window), runs the
tracker, maps peaks back to full-frame coordinates, and applies the
border update rule. History is stored in full-frame coordinates and
remapped into whatever crop window is current.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
import torch

from ..datasets import VideoClip
from ..tracker.model import HistoryGuidedTracker, forward_track
from ..tracker.peaks import extract_instances
from .cropping import CropPolicy, clamp_window, crop_frames, crop_to_full, full_to_crop, update_crop


@dataclass
class TrackState:
    crop_window: np.ndarray              # top-left (u0, v0)
    crop_size: tuple[int, int]
    frame_shape: tuple[int, int]
    instance_count: int
    history_full: np.ndarray             # (t+1, K, 2) predicted full-frame coords
    frame_buffer: list = field(default_factory=list)  # recent full frames, oldest first
    low_confidence: list = field(default_factory=list)

    def push_frame(self, frame: np.ndarray, keep: int) -> None:
        self.frame_buffer.append(frame)
        del self.frame_buffer[:-keep]


def initialize_manual(clip: VideoClip, y0: np.ndarray, policy: CropPolicy) -> TrackState:
    """Seed tracking from given frame-0 coordinates (K, 2)."""
    y0 = np.atleast_2d(np.asarray(y0, dtype=np.float64))
    fh, fw = clip.frame_shape
    if (y0[:, 0] < 0).any() or (y0[:, 0] > fw - 1).any() or (y0[:, 1] < 0).any() or (y0[:, 1] > fh - 1).any():
        raise ValueError(f"initial coordinates {y0.tolist()} outside frame {fh}x{fw}")
    window = clamp_window(y0.mean(axis=0), policy.crop_size, clip.frame_shape)
    state = TrackState(
        crop_window=window,
        crop_size=policy.crop_size,
        frame_shape=clip.frame_shape,
        instance_count=len(y0),
        history_full=y0[None].copy(),
        low_confidence=[False],
    )
    state.frame_buffer.append(clip.frames[0])
    return state


def initialize_automatic(detector, clip: VideoClip, num_instances: int, policy: CropPolicy,
                         cca_threshold: float = 0.5) -> TrackState:
    """Seed tracking from a full-frame detection on frame 0.

    The detector runs on the downscaled frame; peaks are mapped back to
    full-frame pixels. An all-zero detector map falls back to the frame
    center, flagged low confidence.
    """
    frame0 = clip.frames[0]
    heatmap = detector.predict(frame0)
    coords, _values, low_conf = extract_instances(heatmap, num_instances, cca_threshold)
    sh, sw = heatmap.shape
    fh, fw = frame0.shape
    scale = np.array([fw / sw, fh / sh])
    full = (coords + 0.5) * scale - 0.5
    full[:, 0] = np.clip(full[:, 0], 0, fw - 1)
    full[:, 1] = np.clip(full[:, 1], 0, fh - 1)
    state = initialize_manual(clip, full, policy)
    state.low_confidence[0] = bool(low_conf)
    return state


def _match_to_previous(coords: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Permutation of ``coords`` rows minimizing total distance to ``previous``."""
    k = len(previous)
    if k == 1:
        return np.arange(1)
    best, best_cost = None, np.inf
    for perm in permutations(range(k)):
        cost = sum(np.sum((coords[list(perm)][i] - previous[i]) ** 2) for i in range(k))
        if cost < best_cost:
            best, best_cost = perm, cost
    return np.array(best)


@dataclass
class TrackResult:
    predictions: np.ndarray     # (n, K, 2) full-frame coordinates
    confidences: np.ndarray     # (n, K) heatmap peak values (1.0 at frame 0)
    low_confidence: np.ndarray  # (n,) bool
    frame_times: np.ndarray     # (n-1,) seconds per tracked frame
    crop_windows: np.ndarray    # (n, 2) window used for each frame's prediction

    @property
    def fps(self) -> float:
        total = self.frame_times.sum()
        return len(self.frame_times) / total if total > 0 else float("inf")

    def to_record(self) -> dict:
        frames = []
        for t in range(len(self.predictions)):
            frames.append({
                "frame": t,
                "instances": [
                    {"u": float(u), "v": float(v), "confidence": float(c)}
                    for (u, v), c in zip(self.predictions[t], self.confidences[t])
                ],
                "low_confidence": bool(self.low_confidence[t]),
            })
        return {"fps": float(self.fps), "frames": frames}


def run_tracking(model: HistoryGuidedTracker, clip: VideoClip, policy: CropPolicy,
                 window: int = 5, num_instances: int | None = None,
                 init: str = "manual", y0: np.ndarray | None = None, detector=None,
                 cca_threshold: float = 0.5, teacher_force: bool = False) -> TrackResult:
    """Track a full sequence; frame 0 is the initialization, no model call."""
    if num_instances is None:
        num_instances = clip.num_instances or 1
    if init == "manual":
        if y0 is None:
            if clip.landmarks is None or np.isnan(clip.landmarks[0]).any():
                raise ValueError("manual initialization needs frame-0 coordinates")
            y0 = clip.landmarks[0]
        state = initialize_manual(clip, y0, policy)
    elif init == "auto":
        if detector is None:
            raise ValueError("automatic initialization needs a detector model")
        state = initialize_automatic(detector, clip, num_instances, policy, cca_threshold)
    else:
        raise ValueError(f"unknown init mode {init!r}")

    n = clip.num_frames
    k = state.instance_count
    predictions = np.zeros((n, k, 2))
    confidences = np.ones((n, k))
    low_conf = np.zeros(n, dtype=bool)
    crop_windows = np.zeros((n, 2), dtype=np.int64)
    predictions[0] = state.history_full[0]
    low_conf[0] = state.low_confidence[0]
    crop_windows[0] = state.crop_window
    times = np.zeros(max(n - 1, 0))

    for t in range(1, n):
        start_time = time.perf_counter()
        frame_idx = [max(0, t - window + 1 + i) for i in range(window)]
        crops = crop_frames(clip.frames[frame_idx], state.crop_window, policy.crop_size)
        past_idx = frame_idx[:-1]
        if teacher_force and clip.landmarks is not None:
            past_full = np.where(
                np.isnan(clip.landmarks[past_idx]), predictions[past_idx], clip.landmarks[past_idx]
            )
        else:
            past_full = predictions[past_idx]
        history_crop = full_to_crop(past_full, state.crop_window)
        try:
            _heatmap, coords_crop, values, flagged, _aux = forward_track(
                model, crops, history_crop, k, cca_threshold
            )
        except Exception as exc:
            raise RuntimeError(f"tracking failed at frame {t}: {exc}") from exc
        coords_full = crop_to_full(coords_crop, state.crop_window)
        order = _match_to_previous(coords_full, predictions[t - 1])
        predictions[t] = coords_full[order]
        confidences[t] = values[order]
        low_conf[t] = flagged
        crop_windows[t] = state.crop_window
        state.history_full = np.concatenate([state.history_full, predictions[t][None]])
        state.low_confidence.append(bool(flagged))
        state.push_frame(clip.frames[t], keep=window - 1)
        state = update_crop(state, coords_crop[order], policy)
        times[t - 1] = time.perf_counter() - start_time

    return TrackResult(predictions, confidences, low_conf, times, crop_windows)
