"""Orchestration: cropping, sampling, initialization, tracking, training."""

from .cropping import CropPolicy, clamp_window, crop_frames, crop_to_full, full_to_crop, update_crop
from .sampling import SequenceTooShortError, TrainingWindow, sample_training_window
from .tracking import TrackResult, TrackState, initialize_automatic, initialize_manual, run_tracking
from .training import (
    LandmarkDetector,
    build_tracker,
    load_detector,
    load_tracker,
    train_detector,
    train_tracker,
)

__all__ = [
    "CropPolicy",
    "LandmarkDetector",
    "SequenceTooShortError",
    "TrackResult",
    "TrackState",
    "TrainingWindow",
    "build_tracker",
    "clamp_window",
    "crop_frames",
    "crop_to_full",
    "full_to_crop",
    "initialize_automatic",
    "initialize_manual",
    "load_detector",
    "load_tracker",
    "run_tracking",
    "sample_training_window",
    "train_detector",
    "train_tracker",
    "update_crop",
]
