"""Synthetic fluoroscopy-like sequence generator.

Scenes are built from independent darkness layers on a bright background:
a random branching vessel tree (contrast washes in over a few frames),
device landmarks rendered as small Gaussian dark blobs (a single tip or a
rigid marker pair), an optional catheter body curve ending at the tip,
and distractor blobs with independent motion. Layers combine by
elementwise max (dominant absorber), so a vessel at full contrast
genuinely hides a device underneath it.

Every stochastic component draws from its own child RNG stream, so
toggling contrast or occlusion off reproduces the remaining layers
bit-identically (shot noise is the exception: its draw count depends on
the image, which couples the stream to scene content).

Landmark ground truth is rounded to integer pixels so the brightest
pixel of the device layer recovers the annotation exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import DatasetHandle, VideoClip, save_sequence, write_manifest

BACKGROUND_LEVEL = 0.85
DEVICE_CONTRAST = 0.45
VESSEL_CONTRAST = 0.50
OCCLUDER_CONTRAST = 0.52  # >= DEVICE_CONTRAST so covered landmarks are truly ambiguous
BODY_CONTRAST = 0.30
DEVICE_SIGMA = 1.5
MARKER_SEPARATION = 12.0
VESSEL_ROOT_RADIUS = 4.0
VESSEL_TIP_RADIUS = 1.0
CONTRAST_WASH_FRAMES = 5
VESSEL_MASK_THRESHOLD = 0.3
LANDMARK_CLEARANCE = 10.0  # vessels/distractors keep this far from landmarks
EDGE_MARGIN = 6
OCCLUSION_MIN_FRAMES = 3


@dataclass
class MotionModel:
    """Cardiac sinusoid plus linear drift, in pixels."""

    amplitude: float = 6.0
    period: float = 12.0
    drift: float = 0.3


@dataclass
class PhantomConfig:
    image_size: tuple[int, int] = (256, 256)
    frames_per_sequence: int = 24
    pixel_spacing: float = 0.2
    num_instances: int = 1
    contrast_onset_frame: int | None = 4
    occlusion_probability: float = 0.5
    motion: MotionModel = field(default_factory=MotionModel)
    noise_sigma: float = 0.01
    shot_noise: bool = False
    num_distractors: int = 2
    with_body: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if isinstance(self.image_size, int):
            self.image_size = (self.image_size, self.image_size)
        else:
            self.image_size = tuple(int(s) for s in self.image_size)
        if isinstance(self.motion, dict):
            self.motion = MotionModel(**self.motion)
        self.validate()

    def validate(self) -> None:
        h, w = self.image_size
        if h <= 0 or w <= 0:
            raise ValueError(f"image_size must be positive, got {self.image_size}")
        if self.frames_per_sequence < 2:
            raise ValueError("frames_per_sequence must be >= 2")
        if not 0.0 <= self.occlusion_probability <= 1.0:
            raise ValueError("occlusion_probability must lie in [0, 1]")
        if self.num_instances not in (1, 2):
            raise ValueError("num_instances must be 1 (tip) or 2 (marker pair)")
        if self.pixel_spacing <= 0:
            raise ValueError("pixel_spacing must be positive")
        if self.num_distractors < 0:
            raise ValueError("num_distractors must be >= 0")
        if self.contrast_onset_frame is not None and self.contrast_onset_frame < 0:
            raise ValueError("contrast_onset_frame must be >= 0 or None")


def _streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(7)
    names = ["background", "vessels", "motion", "distractors", "occlusion", "noise", "annotation"]
    return {name: np.random.default_rng(ss) for name, ss in zip(names, children)}


def _stamp_disc(canvas: np.ndarray, x: float, y: float, radius: float) -> None:
    """Max-blend a soft disc (1 inside, linear 1-px falloff) into ``canvas``."""
    h, w = canvas.shape
    r = int(np.ceil(radius + 1.5))
    x0, x1 = max(0, int(x) - r), min(w, int(x) + r + 1)
    y0, y1 = max(0, int(y) - r), min(h, int(y) + r + 1)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dist = np.hypot(xs - x, ys - y)
    np.maximum(canvas[y0:y1, x0:x1], np.clip(radius + 0.5 - dist, 0.0, 1.0),
               out=canvas[y0:y1, x0:x1])


def _stamp_gaussian(canvas: np.ndarray, x: float, y: float, sigma: float, amplitude: float) -> None:
    h, w = canvas.shape
    r = int(np.ceil(4 * sigma))
    x0, x1 = max(0, int(x) - r), min(w, int(x) + r + 1)
    y0, y1 = max(0, int(y) - r), min(h, int(y) + r + 1)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    blob = amplitude * np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2.0 * sigma**2))
    np.maximum(canvas[y0:y1, x0:x1], blob, out=canvas[y0:y1, x0:x1])


def _bezier_points(p0, p1, p2, spacing: float = 0.7) -> np.ndarray:
    p0, p1, p2 = (np.asarray(p, dtype=np.float64) for p in (p0, p1, p2))
    approx_len = np.linalg.norm(p1 - p0) + np.linalg.norm(p2 - p1)
    count = max(2, int(np.ceil(approx_len / spacing)))
    t = np.linspace(0.0, 1.0, count)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2


def _grow_vessel_tree(rng: np.random.Generator, shape: tuple[int, int]) -> list[tuple[np.ndarray, float, float]]:
    """Random binary branching tree of quadratic Bezier segments.

    Returns (points, start_radius, end_radius) per segment; radii taper from
    VESSEL_ROOT_RADIUS toward VESSEL_TIP_RADIUS with depth.
    """
    h, w = shape
    scale = 0.35 * min(h, w)
    side = rng.integers(4)
    along = rng.uniform(0.25, 0.75)
    if side == 0:
        root, direction = np.array([along * w, 0.0]), np.array([0.0, 1.0])
    elif side == 1:
        root, direction = np.array([along * w, h - 1.0]), np.array([0.0, -1.0])
    elif side == 2:
        root, direction = np.array([0.0, along * h]), np.array([1.0, 0.0])
    else:
        root, direction = np.array([w - 1.0, along * h]), np.array([-1.0, 0.0])

    segments = []

    def grow(p0, direction, length, radius, depth):
        if depth > 3 or radius < VESSEL_TIP_RADIUS * 0.8:
            return
        angle = rng.uniform(-0.35, 0.35)
        rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        direction = rot @ direction
        p2 = p0 + direction * length
        normal = np.array([-direction[1], direction[0]])
        p1 = (p0 + p2) / 2 + normal * rng.uniform(-0.3, 0.3) * length
        end_radius = max(VESSEL_TIP_RADIUS, radius * 0.75)
        segments.append((_bezier_points(p0, p1, p2), radius, end_radius))
        for sign in (1.0, -1.0):
            theta = sign * rng.uniform(0.3, 0.9)
            rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
            grow(p2, rot @ direction, length * rng.uniform(0.6, 0.85), end_radius, depth + 1)

    grow(root, direction, scale, VESSEL_ROOT_RADIUS, 0)
    return segments


def _rasterize_tree(segments, shape: tuple[int, int], pad: int) -> np.ndarray:
    canvas = np.zeros((shape[0] + 2 * pad, shape[1] + 2 * pad))
    for points, r0, r1 in segments:
        radii = np.linspace(r0, r1, len(points))
        for (x, y), r in zip(points, radii):
            _stamp_disc(canvas, x + pad, y + pad, r)
    return canvas


def _sinusoid_path(rng, start, n, motion: MotionModel, bounds, margin):
    """Integer positions of a point moving with sinusoid + drift, clamped in-bounds."""
    phase = rng.uniform(0, 2 * np.pi)
    theta = rng.uniform(0, 2 * np.pi)
    osc_dir = np.array([np.cos(theta), np.sin(theta)])
    theta_d = rng.uniform(0, 2 * np.pi)
    drift_dir = np.array([np.cos(theta_d), np.sin(theta_d)])
    t = np.arange(n)[:, None]
    path = (
        np.asarray(start, dtype=np.float64)
        + motion.amplitude * np.sin(2 * np.pi * t / motion.period + phase) * osc_dir
        + motion.drift * t * drift_dir
    )
    h, w = bounds
    path[:, 0] = np.clip(path[:, 0], margin, w - 1 - margin)
    path[:, 1] = np.clip(path[:, 1], margin, h - 1 - margin)
    return np.round(path)


def _keep_clear(path: np.ndarray, landmark_paths: np.ndarray, min_dist: float) -> np.ndarray:
    """Push path points radially away from landmarks closer than ``min_dist``."""
    out = path.copy()
    for t in range(len(out)):
        for lm in landmark_paths[t]:
            delta = out[t] - lm
            dist = np.linalg.norm(delta)
            if dist < min_dist:
                direction = delta / dist if dist > 1e-9 else np.array([1.0, 0.0])
                out[t] = lm + direction * min_dist
    return out


def render_sequence(config: PhantomConfig) -> tuple[VideoClip, dict]:
    """Generate one sequence; also returns the per-layer darkness stacks."""
    config.validate()
    h, w = config.image_size
    n = config.frames_per_sequence
    rngs = _streams(config.rng_seed)

    # background: bright base with a gentle deterministic ramp
    gy = rngs["background"].uniform(-0.05, 0.05)
    gx = rngs["background"].uniform(-0.05, 0.05)
    ys, xs = np.mgrid[0:h, 0:w]
    background = BACKGROUND_LEVEL + gy * (ys / max(h - 1, 1) - 0.5) + gx * (xs / max(w - 1, 1) - 0.5)

    # device landmark trajectories (integer ground truth)
    margin = EDGE_MARGIN + int(np.ceil(MARKER_SEPARATION / 2)) if config.num_instances == 2 else EDGE_MARGIN
    start = np.array([
        rngs["motion"].uniform(0.3 * w, 0.7 * w),
        rngs["motion"].uniform(0.3 * h, 0.7 * h),
    ])
    center_path = _sinusoid_path(rngs["motion"], start, n, config.motion, (h, w), margin)
    if config.num_instances == 2:
        angle = rngs["motion"].uniform(0, 2 * np.pi)
        offset = np.array([np.cos(angle), np.sin(angle)]) * MARKER_SEPARATION / 2
        landmarks = np.stack([np.round(center_path - offset), np.round(center_path + offset)], axis=1)
    else:
        landmarks = center_path[:, None, :]
    landmarks[..., 0] = np.clip(landmarks[..., 0], 0, w - 1)
    landmarks[..., 1] = np.clip(landmarks[..., 1], 0, h - 1)

    # vessel tree rasterized once on a padded canvas, shifted per frame
    pad = 16
    tree = _rasterize_tree(_grow_vessel_tree(rngs["vessels"], (h, w)), (h, w), pad)
    vessel_phase = rngs["vessels"].uniform(0, 2 * np.pi)
    theta = rngs["vessels"].uniform(0, 2 * np.pi)
    vessel_dir = np.array([np.cos(theta), np.sin(theta)])

    onset = config.contrast_onset_frame
    contrast_on = onset is not None and onset < n
    ramp = np.zeros(n)
    if contrast_on:
        t = np.arange(n)
        ramp = np.clip((t - onset + 1) / CONTRAST_WASH_FRAMES, 0.0, 1.0) * (t >= onset)

    # occlusion event: a dedicated branch tracking the landmark for >=3 frames
    occ_draw = rngs["occlusion"].random()
    occluder = None
    if contrast_on and config.occlusion_probability > 0 and occ_draw < config.occlusion_probability:
        full_contrast = int(onset + CONTRAST_WASH_FRAMES - 1)
        max_len = min(6, n - full_contrast)
        if max_len >= OCCLUSION_MIN_FRAMES:
            length = int(rngs["occlusion"].integers(OCCLUSION_MIN_FRAMES, max_len + 1))
            t0 = int(rngs["occlusion"].integers(full_contrast, n - length + 1))
            phi = rngs["occlusion"].uniform(0, 2 * np.pi)
            occluder = {
                "t0": t0,
                "t1": t0 + length,
                "dir": np.array([np.cos(phi), np.sin(phi)]),
                "instance": 0,
            }

    # distractor blobs: same contrast as the device, independent motion
    distractor_paths = []
    for _ in range(config.num_distractors):
        for _attempt in range(20):
            dstart = np.array([
                rngs["distractors"].uniform(EDGE_MARGIN, w - 1 - EDGE_MARGIN),
                rngs["distractors"].uniform(EDGE_MARGIN, h - 1 - EDGE_MARGIN),
            ])
            local = MotionModel(
                amplitude=0.8 * config.motion.amplitude,
                period=config.motion.period * rngs["distractors"].uniform(0.7, 1.3),
                drift=0.5 * config.motion.drift,
            )
            path = _sinusoid_path(rngs["distractors"], dstart, n, local, (h, w), EDGE_MARGIN)
            dists = np.linalg.norm(path[:, None, :] - landmarks, axis=2)
            if dists.min() >= LANDMARK_CLEARANCE + 2:
                break
        path = _keep_clear(path, landmarks, LANDMARK_CLEARANCE + 2)
        distractor_paths.append(path)

    noise = rngs["noise"].normal(0.0, config.noise_sigma, size=(n, h, w)) if config.noise_sigma > 0 else np.zeros((n, h, w))

    device_layer = np.zeros((n, h, w))
    distractor_layer = np.zeros((n, h, w))
    vessel_layer = np.zeros((n, h, w))
    body_layer = np.zeros((n, h, w))
    vessel_mask = np.zeros((n, h, w), dtype=bool)
    body_mask = np.zeros((n, h, w), dtype=bool) if (config.with_body and config.num_instances == 1) else None
    frames = np.zeros((n, h, w), dtype=np.float32)
    occluded_flags = np.zeros(n, dtype=bool)

    body_anchor = None
    if body_mask is not None:
        edge_x = float(np.clip(landmarks[0, 0, 0] + rngs["motion"].uniform(-0.2, 0.2) * w, 4, w - 5))
        body_anchor = np.array([edge_x, 0.0])

    for t in range(n):
        for inst in range(landmarks.shape[1]):
            u, v = landmarks[t, inst]
            _stamp_gaussian(device_layer[t], u, v, DEVICE_SIGMA, DEVICE_CONTRAST)
        for path in distractor_paths:
            _stamp_gaussian(distractor_layer[t], path[t, 0], path[t, 1], DEVICE_SIGMA, DEVICE_CONTRAST)

        if body_mask is not None:
            tip = landmarks[t, 0]
            ctrl = (body_anchor + tip) / 2 + np.array([0.15 * w, 0.0]) * np.sin(
                2 * np.pi * t / config.motion.period
            ) * 0.2
            density = np.zeros((h, w))
            for x, y in _bezier_points(body_anchor, ctrl, tip):
                _stamp_disc(density, x, y, 1.2)
            body_layer[t] = density * BODY_CONTRAST
            body_mask[t] = density > VESSEL_MASK_THRESHOLD

        if contrast_on and ramp[t] > 0:
            shift = 0.7 * config.motion.amplitude * np.sin(2 * np.pi * t / config.motion.period + vessel_phase)
            dx = int(np.clip(np.round(shift * vessel_dir[0]), -pad, pad))
            dy = int(np.clip(np.round(shift * vessel_dir[1]), -pad, pad))
            density = tree[pad - dy : pad - dy + h, pad - dx : pad - dx + w].copy()
            # regular branches never touch landmark neighborhoods; only the
            # dedicated occluder may cover a landmark
            for inst in range(landmarks.shape[1]):
                u, v = landmarks[t, inst]
                r = int(np.ceil(LANDMARK_CLEARANCE))
                x0, x1 = max(0, int(u) - r), min(w, int(u) + r + 1)
                y0, y1 = max(0, int(v) - r), min(h, int(v) + r + 1)
                yy, xx = np.mgrid[y0:y1, x0:x1]
                density[y0:y1, x0:x1][np.hypot(xx - u, yy - v) <= LANDMARK_CLEARANCE] = 0.0
            occ_density = np.zeros((h, w))
            if occluder is not None:
                lm = landmarks[:, occluder["instance"], :]
                if t < occluder["t0"]:
                    q = lm[occluder["t0"]] + occluder["dir"] * 6.0 * (occluder["t0"] - t)
                elif t >= occluder["t1"]:
                    q = lm[occluder["t1"] - 1] + occluder["dir"] * 6.0 * (t - occluder["t1"] + 1)
                else:
                    q = lm[t]
                normal = np.array([-occluder["dir"][1], occluder["dir"][0]])
                p0, p2 = q - normal * 22.0, q + normal * 22.0
                # curve midpoint sits at q + dir*1, still inside the 3-px stamp
                p1 = q + occluder["dir"] * 2.0
                for x, y in _bezier_points(p0, p1, p2):
                    _stamp_disc(occ_density, x, y, 3.0)
            vessel_layer[t] = np.maximum(density * VESSEL_CONTRAST, occ_density * OCCLUDER_CONTRAST) * ramp[t]
            vessel_mask[t] = np.maximum(density, occ_density) > VESSEL_MASK_THRESHOLD

        for inst in range(landmarks.shape[1]):
            u, v = landmarks[t, inst].astype(int)
            if vessel_layer[t, v, u] >= DEVICE_CONTRAST:
                occluded_flags[t] = True

        darkness = np.maximum.reduce([device_layer[t], distractor_layer[t], vessel_layer[t], body_layer[t]])
        frame = np.clip(background - darkness, 0.0, 1.0)
        if config.shot_noise:
            photons = 200.0
            frame = rngs["noise"].poisson(frame * photons) / photons
        frames[t] = np.clip(frame + noise[t], 0.0, 1.0)

    clip = VideoClip(
        frames=frames,
        pixel_spacing=config.pixel_spacing,
        landmarks=landmarks,
        vessel_mask=vessel_mask,
        body_mask=body_mask,
        occluded_flags=occluded_flags,
    )
    layers = {
        "device": device_layer,
        "distractor": distractor_layer,
        "vessel": vessel_layer,
        "body": body_layer,
        "background": background,
    }
    return clip, layers


def generate_sequence(config: PhantomConfig) -> VideoClip:
    """Generate a single annotated sequence from ``config``."""
    clip, _ = render_sequence(config)
    return clip


def generate_dataset(config: PhantomConfig, num_sequences: int, annotation_rate: float,
                     root) -> DatasetHandle:
    """Write ``num_sequences`` sequences under ``root`` and a manifest.

    Sequence i uses seed ``config.rng_seed + i``. Landmark annotations are
    dropped on a random subset of frames to hit ``annotation_rate`` exactly
    (rounded); frame 0 is always kept.
    """
    if not 0.0 < annotation_rate <= 1.0:
        raise ValueError("annotation_rate must lie in (0, 1]")
    if num_sequences < 0:
        raise ValueError("num_sequences must be >= 0")
    root = Path(root)
    entries = []
    for i in range(num_sequences):
        seq_config = dataclasses.replace(config, rng_seed=config.rng_seed + i)
        clip = generate_sequence(seq_config)
        if annotation_rate < 1.0:
            n = clip.num_frames
            keep = max(1, int(np.floor(annotation_rate * n + 0.5)))
            rng = _streams(seq_config.rng_seed)["annotation"]
            others = rng.choice(np.arange(1, n), size=keep - 1, replace=False) if keep > 1 else []
            kept = {0, *(int(j) for j in others)}
            for t in range(n):
                if t not in kept:
                    clip.landmarks[t] = np.nan
        name = f"seq_{i:04d}"
        try:
            save_sequence(root / name, clip)
        except OSError as exc:
            raise OSError(f"failed writing sequence to {root / name}: {exc}") from exc
        entries.append({
            "name": name,
            "frames": clip.num_frames,
            "annotated_frames": int(len(clip.annotated_frames())),
            "num_instances": clip.num_instances,
            "occluded": bool(clip.occluded_flags.any()),
            "seed": seq_config.rng_seed,
        })
    write_manifest(root, entries, extra={"pixel_spacing": config.pixel_spacing})
    return DatasetHandle(root=root, sequences=[e["name"] for e in entries])


def split_entries(entries: list[dict]) -> tuple[list[str], list[str]]:
    """Partition sequence entries by whether any frame is occluded."""
    with_occ = [e["name"] for e in entries if e.get("occluded")]
    without = [e["name"] for e in entries if not e.get("occluded")]
    return with_occ, without


def split_by_occlusion(dataset: DatasetHandle) -> tuple[list[str], list[str]]:
    """Occlusion partition of a dataset, read from its manifest."""
    from .datasets import load_manifest

    manifest = load_manifest(dataset.root)
    return split_entries(manifest["sequences"])
