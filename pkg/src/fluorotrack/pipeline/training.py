"""Tracker and detector training.

The tracker trains teacher-forced: past-frame ground-truth coordinates
drive the correlation tokens while the dice loss supervises the current
frame's heatmap. The detector shares the encoder architecture and runs
on a single downscaled full frame for automatic initialization.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..checkpoint import load_checkpoint, load_into_module, save_checkpoint, state_dict_to_blobs
from ..config import RunConfig
from ..datasets import DatasetHandle
from ..mvae.attention import SpaceTimeEncoder
from ..mvae.pretrain import cosine_lr
from ..tracker.losses import loss_downstream, make_heatmap_target
from ..tracker.model import HeatmapHead, HistoryGuidedTracker
from .sampling import iter_training_clips, sample_training_window


def build_tracker(config: RunConfig) -> HistoryGuidedTracker:
    return HistoryGuidedTracker(
        dim=config["model.dim"],
        encoder_depth=config["model.encoder_depth"],
        num_heads=config["model.heads"],
        mca_depth=config["track.mca_depth"],
        patch=config["model.patch"],
        heatmap_channels=config["model.heatmap_channels"],
        appearance_k=config["track.appearance_k"],
        use_appearance=config["track.appearance_tokens"],
        use_trajectory=config["track.trajectory_tokens"],
        with_aux=config["track.aux_body_mask"],
    )


def load_pretrained_encoder(model: nn.Module, checkpoint_path) -> None:
    """Copy encoder weights (canonical ``encoder.*`` names) from a checkpoint."""
    tensors, meta = load_checkpoint(checkpoint_path)
    encoder_blobs = {k: v for k, v in tensors.items() if k.startswith("encoder.")}
    if not encoder_blobs:
        raise ValueError(f"{checkpoint_path}: no encoder tensors found")
    load_into_module(model.encoder, encoder_blobs, prefix="encoder.", strict=True)


def train_tracker(dataset: DatasetHandle, config: RunConfig, out_dir,
                  pretrained=None, seed: int | None = None) -> Path:
    """Train the tracker; returns the checkpoint path.

    ``pretrained`` (optional) initializes the encoder from a pretraining
    checkpoint; without it the encoder trains from random init.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.dump(out_dir)
    seed = config.seed if seed is None else seed

    window = config["track.window"]
    crop = config["track.crop"]
    crop_size = (crop, crop)
    clips = [dataset.load(name) for name in dataset.sequences]
    clips = iter_training_clips(clips, dataset.sequences, window)
    if not clips:
        raise ValueError(f"{dataset.root}: no sequence has {window} annotated frames")

    torch.manual_seed(seed)
    model = build_tracker(config)
    if pretrained is not None:
        load_pretrained_encoder(model, pretrained)

    steps = config["track.steps"]
    batch = config["track.batch"]
    sigma = config["track.heatmap_sigma"]
    aux_weight = config["track.aux_weight"]
    use_aux = config["track.aux_body_mask"]
    optimizer = torch.optim.Adam(model.parameters(), lr=config["track.lr"])

    curve = []
    for step in range(steps):
        rng = np.random.default_rng(np.random.SeedSequence([seed, step]))
        crops_b, history_b, targets, aux_targets = [], [], [], []
        for _ in range(batch):
            clip = clips[int(rng.integers(len(clips)))]
            sample = sample_training_window(clip, rng, window, crop_size)
            crops_b.append(sample.frames)
            history_b.append(sample.coords[:-1])
            targets.append(make_heatmap_target(crop_size, sample.coords[-1], sigma))
            if use_aux and sample.body_mask is not None:
                aux_targets.append(torch.from_numpy(sample.body_mask[-1]))
            else:
                aux_targets.append(None)
        crops_t = torch.from_numpy(np.stack(crops_b))
        history_t = torch.from_numpy(np.stack(history_b).astype(np.float32))
        targets_t = torch.from_numpy(np.stack(targets).astype(np.float32))

        lr = cosine_lr(step, steps, config["track.lr"], config["pretrain.warmup_frac"])
        for group in optimizer.param_groups:
            group["lr"] = lr

        heatmaps, aux_maps = model.forward_window(crops_t, history_t)
        losses = []
        for i in range(batch):
            aux_t = [aux_targets[i]] if use_aux else None
            aux_p = [aux_maps[i]] if use_aux and aux_maps is not None else None
            weights = [aux_weight] if use_aux else None
            losses.append(loss_downstream(targets_t[i], heatmaps[i], aux_t, aux_p, weights))
        loss = torch.stack(losses).mean()
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite tracker loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        curve.append((step, float(loss.detach())))

    ckpt_path = out_dir / "tracker.ckpt"
    meta = {
        "kind": "tracker",
        "step": steps,
        "seed": seed,
        "config_hash": config.config_hash,
        "dims": model.config_dims(),
        "pretrained": str(pretrained) if pretrained else None,
    }
    save_checkpoint(ckpt_path, state_dict_to_blobs(model), meta)
    with open(out_dir / "loss_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        writer.writerows(curve)
    return ckpt_path


def load_tracker(path) -> HistoryGuidedTracker:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "tracker":
        raise ValueError(f"{path}: not a tracker checkpoint")
    dims = meta["dims"]
    model = HistoryGuidedTracker(
        dim=dims["dim"],
        encoder_depth=dims["encoder_depth"],
        num_heads=dims["num_heads"],
        mca_depth=dims["mca_depth"],
        patch=dims["patch"],
        heatmap_channels=dims["heatmap_channels"],
        appearance_k=dims["appearance_k"],
        use_appearance=dims["use_appearance"],
        use_trajectory=dims["use_trajectory"],
        with_aux=dims["with_aux"],
    )
    load_into_module(model, tensors, strict=True)
    return model


class LandmarkDetector(nn.Module):
    """Single-frame detector: tracker backbone + upsampling conv head."""

    def __init__(self, dim: int = 64, encoder_depth: int = 4, num_heads: int = 4,
                 patch: int = 16, channels: int = 32, input_size: int = 64):
        super().__init__()
        self.dim = dim
        self.patch = patch
        self.input_size = input_size
        self.encoder = SpaceTimeEncoder(dim, encoder_depth, num_heads, patch)
        self.head = HeatmapHead(dim, channels)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, s, s) resized frames -> (B, s, s) heatmaps."""
        b, h, w = frames.shape
        tokens = self.encoder.encode_clip(frames[:, None])
        gh, gw = h // self.patch, w // self.patch
        return self.head(tokens.reshape(b, gh, gw, self.dim))

    @torch.no_grad()
    def predict(self, frame: np.ndarray) -> np.ndarray:
        """Full frame of any size -> heatmap at detector input resolution."""
        self.eval()
        x = torch.from_numpy(np.ascontiguousarray(frame, dtype=np.float32))[None, None]
        x = torch.nn.functional.interpolate(
            x, size=(self.input_size, self.input_size), mode="bilinear", align_corners=False
        )
        return self(x[:, 0])[0].numpy()


def _resize_coords(coords: np.ndarray, src_shape, dst: int) -> np.ndarray:
    sh, sw = src_shape
    scale = np.array([dst / sw, dst / sh])
    return (np.asarray(coords, dtype=np.float64) + 0.5) * scale - 0.5


def train_detector(dataset: DatasetHandle, config: RunConfig, out_dir,
                   pretrained=None, seed: int | None = None) -> Path:
    """Train the automatic-initialization detector on annotated full frames."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.dump(out_dir)
    seed = config.seed if seed is None else seed
    size = config["detector.size"]
    sigma = config["track.heatmap_sigma"]

    frames, coords = [], []
    for name in dataset.sequences:
        clip = dataset.load(name)
        for t in clip.annotated_frames():
            frames.append(clip.frames[t])
            coords.append(_resize_coords(clip.landmarks[t], clip.frame_shape, size))
    if not frames:
        raise ValueError(f"{dataset.root}: no annotated frames for detector training")

    torch.manual_seed(seed)
    model = LandmarkDetector(
        dim=config["model.dim"], encoder_depth=config["model.encoder_depth"],
        num_heads=config["model.heads"], patch=config["model.patch"],
        channels=config["model.heatmap_channels"], input_size=size,
    )
    if pretrained is not None:
        load_pretrained_encoder(model, pretrained)

    resized = torch.nn.functional.interpolate(
        torch.from_numpy(np.stack(frames).astype(np.float32))[:, None],
        size=(size, size), mode="bilinear", align_corners=False,
    )[:, 0].numpy()
    targets = np.stack([make_heatmap_target((size, size), c, sigma) for c in coords]).astype(np.float32)

    steps = config["detector.steps"]
    batch = config["track.batch"]
    optimizer = torch.optim.Adam(model.parameters(), lr=config["detector.lr"])
    from ..tracker.losses import soft_dice

    for step in range(steps):
        rng = np.random.default_rng(np.random.SeedSequence([seed, step]))
        idx = rng.integers(len(resized), size=min(batch, len(resized)))
        x = torch.from_numpy(np.ascontiguousarray(resized[idx]))
        y = torch.from_numpy(np.ascontiguousarray(targets[idx]))
        pred = model(x)
        loss = torch.stack([soft_dice(y[i], pred[i]) for i in range(len(idx))]).mean()
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite detector loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

    ckpt_path = out_dir / "detector.ckpt"
    meta = {
        "kind": "detector",
        "seed": seed,
        "config_hash": config.config_hash,
        "dims": {
            "dim": model.dim,
            "encoder_depth": len(model.encoder.blocks),
            "num_heads": model.encoder.blocks[0].attn.num_heads,
            "patch": model.patch,
            "channels": config["model.heatmap_channels"],
            "input_size": size,
        },
    }
    save_checkpoint(ckpt_path, state_dict_to_blobs(model), meta)
    return ckpt_path


def load_detector(path) -> LandmarkDetector:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "detector":
        raise ValueError(f"{path}: not a detector checkpoint")
    dims = meta["dims"]
    model = LandmarkDetector(
        dim=dims["dim"], encoder_depth=dims["encoder_depth"], num_heads=dims["num_heads"],
        patch=dims["patch"], channels=dims["channels"], input_size=dims["input_size"],
    )
    load_into_module(model, tensors, strict=True)
    return model
