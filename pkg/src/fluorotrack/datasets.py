"""Sequence container and on-disk dataset layout.

A dataset is a directory of sequence subdirectories plus a manifest:

    root/
      manifest.json            # sequence list + occlusion split assignment
      seq_0000/
        frame_0000.png ...     # 8-bit grayscale
        vessel_0000.png ...    # optional binary masks
        body_0000.png ...      # optional binary masks
        vesselness_0000.png .. # optional weak labels (written offline)
        sequence.json          # spacing, landmarks, flags, file references

Landmark coordinates are (u=column, v=row) floating-point pixels; frames
without annotation store null and are NaN in memory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass
class VideoClip:
    """Fixed-length grayscale frame stack with physical spacing and annotations.

    frames: (n, h, w) float32 in [0, 1]
    landmarks: (n, K, 2) float array of (u, v), NaN rows where unannotated,
        or None when the clip carries no landmark annotations at all
    vessel_mask / body_mask: (n, h, w) bool or None
    occluded_flags: (n,) bool
    weak_labels: (n, h, w) float32 in [0, 1] or None
    """

    frames: np.ndarray
    pixel_spacing: float
    landmarks: np.ndarray | None = None
    vessel_mask: np.ndarray | None = None
    body_mask: np.ndarray | None = None
    occluded_flags: np.ndarray | None = None
    weak_labels: np.ndarray | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (n, h, w), got {self.frames.shape}")
        if self.occluded_flags is None:
            self.occluded_flags = np.zeros(len(self.frames), dtype=bool)
        self.validate()

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    @property
    def num_instances(self) -> int:
        return 0 if self.landmarks is None else self.landmarks.shape[1]

    def annotated_frames(self) -> np.ndarray:
        """Indices of frames whose landmarks are fully present."""
        if self.landmarks is None:
            return np.empty(0, dtype=int)
        ok = ~np.isnan(self.landmarks).any(axis=(1, 2))
        return np.nonzero(ok)[0]

    def validate(self) -> None:
        n, h, w = self.frames.shape
        if self.landmarks is not None:
            lm = np.asarray(self.landmarks, dtype=np.float64)
            if lm.shape[0] != n or lm.ndim != 3 or lm.shape[2] != 2:
                raise ValueError(f"landmarks must be (n, K, 2), got {lm.shape}")
            present = lm[~np.isnan(lm).any(axis=2)]
            if present.size:
                u, v = present[:, 0], present[:, 1]
                if (u < 0).any() or (u > w - 1).any() or (v < 0).any() or (v > h - 1).any():
                    raise ValueError("landmark coordinates outside frame bounds")
            # partially annotated frames (some instances NaN, some not) are invalid
            per_frame = np.isnan(lm).any(axis=2)
            mixed = per_frame.any(axis=1) & ~per_frame.all(axis=1)
            if mixed.any():
                raise ValueError("frames must annotate all instances or none")
            self.landmarks = lm
        for name in ("vessel_mask", "body_mask"):
            m = getattr(self, name)
            if m is not None and m.shape != self.frames.shape:
                raise ValueError(f"{name} shape {m.shape} != frames {self.frames.shape}")
        if len(self.occluded_flags) != n:
            raise ValueError("occluded_flags length mismatch")


def _save_gray(path: Path, values: np.ndarray) -> None:
    arr = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L").save(path)


def _load_gray(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float32) / 255.0


def save_sequence(seq_dir, clip: VideoClip) -> None:
    seq_dir = Path(seq_dir)
    seq_dir.mkdir(parents=True, exist_ok=True)
    n = clip.num_frames
    record: dict = {
        "pixel_spacing": clip.pixel_spacing,
        "num_instances": clip.num_instances,
        "frames": [],
        "landmarks": [],
        "occluded_flags": [bool(f) for f in clip.occluded_flags],
        "vessel_masks": None,
        "body_masks": None,
    }
    for t in range(n):
        name = f"frame_{t:04d}.png"
        _save_gray(seq_dir / name, clip.frames[t])
        record["frames"].append(name)
        if clip.landmarks is None or np.isnan(clip.landmarks[t]).any():
            record["landmarks"].append(None)
        else:
            record["landmarks"].append([[float(u), float(v)] for u, v in clip.landmarks[t]])
    if clip.vessel_mask is not None:
        record["vessel_masks"] = []
        for t in range(n):
            name = f"vessel_{t:04d}.png"
            _save_gray(seq_dir / name, clip.vessel_mask[t].astype(np.float64))
            record["vessel_masks"].append(name)
    if clip.body_mask is not None:
        record["body_masks"] = []
        for t in range(n):
            name = f"body_{t:04d}.png"
            _save_gray(seq_dir / name, clip.body_mask[t].astype(np.float64))
            record["body_masks"].append(name)
    with open(seq_dir / "sequence.json", "w") as fh:
        json.dump(record, fh, indent=1, sort_keys=True)


def load_sequence(seq_dir, with_weak_labels: bool = False) -> VideoClip:
    seq_dir = Path(seq_dir)
    meta_path = seq_dir / "sequence.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{meta_path}: missing sequence metadata")
    with open(meta_path) as fh:
        record = json.load(fh)

    frames = np.stack([_load_gray(seq_dir / name) for name in record["frames"]])
    n = len(frames)
    k = record.get("num_instances", 0)
    landmarks = None
    if k:
        landmarks = np.full((n, k, 2), np.nan)
        for t, entry in enumerate(record["landmarks"]):
            if entry is not None:
                landmarks[t] = np.asarray(entry, dtype=np.float64)

    def _load_masks(key):
        names = record.get(key)
        if not names:
            return None
        return np.stack([_load_gray(seq_dir / nm) > 0.5 for nm in names])

    weak = None
    if with_weak_labels:
        weak_record = record.get("weak_labels")
        if weak_record:
            weak = np.stack([_load_gray(seq_dir / nm) for nm in weak_record])

    return VideoClip(
        frames=frames,
        pixel_spacing=float(record["pixel_spacing"]),
        landmarks=landmarks,
        vessel_mask=_load_masks("vessel_masks"),
        body_mask=_load_masks("body_masks"),
        occluded_flags=np.asarray(record["occluded_flags"], dtype=bool),
        weak_labels=weak,
    )


@dataclass
class DatasetHandle:
    """A dataset root plus its manifest contents."""

    root: Path
    sequences: list[str] = field(default_factory=list)

    def sequence_dirs(self) -> list[Path]:
        return [self.root / name for name in self.sequences]

    def load(self, name: str, with_weak_labels: bool = False) -> VideoClip:
        return load_sequence(self.root / name, with_weak_labels=with_weak_labels)


def write_manifest(root, entries: list[dict], extra: dict | None = None) -> None:
    """Write manifest.json: per-sequence entries plus the occlusion split."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with_occ = [e["name"] for e in entries if e.get("occluded")]
    without = [e["name"] for e in entries if not e.get("occluded")]
    manifest = {
        "sequences": entries,
        "splits": {"with_occlusion": with_occ, "no_occlusion": without},
    }
    if extra:
        manifest.update(extra)
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_manifest(root) -> dict:
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"{path}: missing dataset manifest")
    with open(path) as fh:
        return json.load(fh)


def open_dataset(root) -> DatasetHandle:
    manifest = load_manifest(root)
    names = [e["name"] for e in manifest["sequences"]]
    return DatasetHandle(root=Path(root), sequences=names)
