"""Weak-label vesselness model.

A two-level convolutional encoder-decoder with skip connections is
trained on phantom vessel masks with a smoothed soft dice loss, then
run offline over a dataset to write per-frame vesselness maps next to
the frames. The training dice carries the smoothing constant in the
numerator as well, so all-empty targets still push predictions toward
zero instead of leaving a flat gradient.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint, state_dict_to_blobs
from .datasets import DatasetHandle, VideoClip, _save_gray

DICE_SMOOTH = 1.0


def _conv_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1), nn.GELU(),
        nn.Conv2d(cout, cout, 3, padding=1), nn.GELU(),
    )


class VesselnessModel(nn.Module):
    """1-channel frame in, [0,1] vesselness map of the same spatial size out."""

    def __init__(self, base_width: int = 16):
        super().__init__()
        w = base_width
        self.base_width = base_width
        self.enc1 = _conv_block(1, w)
        self.enc2 = _conv_block(w, 2 * w)
        self.bottleneck = _conv_block(2 * w, 4 * w)
        self.pool = nn.MaxPool2d(2)
        self.up2 = nn.ConvTranspose2d(4 * w, 2 * w, 2, stride=2)
        self.dec2 = _conv_block(4 * w, 2 * w)
        self.up1 = nn.ConvTranspose2d(2 * w, w, 2, stride=2)
        self.dec1 = _conv_block(2 * w, w)
        self.out = nn.Conv2d(w, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x[:, None]
        h, w = x.shape[-2:]
        if h % 4 or w % 4:
            raise ValueError(f"input size {h}x{w} must be divisible by 4")
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        b = self.bottleneck(self.pool(e2))
        d2 = self.dec2(torch.cat([self.up2(b), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        return torch.sigmoid(self.out(d1))[:, 0]

    @torch.no_grad()
    def predict(self, frames: np.ndarray) -> np.ndarray:
        """Vesselness maps for (h,w) or (n,h,w) float frames in [0,1]."""
        self.eval()
        single = frames.ndim == 2
        batch = torch.from_numpy(np.ascontiguousarray(frames[None] if single else frames, dtype=np.float32))
        maps = self(batch).numpy().astype(np.float32)
        return maps[0] if single else maps


def stabilized_dice_loss(target: torch.Tensor, pred: torch.Tensor,
                         smooth: float = DICE_SMOOTH) -> torch.Tensor:
    """Soft dice with the smoothing constant in numerator and denominator.

    Exactly 0 at pred == target, and empty targets still pull predictions
    toward zero (unlike the plain 1 - 2GZ/(G^2+Z^2+eps) form, whose
    gradient vanishes when the numerator is identically zero).
    """
    inter = (target * pred).sum()
    denom = (target**2).sum() + (pred**2).sum()
    return 1.0 - (2.0 * inter + smooth) / (denom + smooth)


def train_vesselness(dataset: DatasetHandle | list[VideoClip], epochs: int = 60,
                     lr: float = 1e-3, base_width: int = 16, batch: int = 4,
                     seed: int = 0) -> tuple[VesselnessModel, list[float]]:
    """Fit the vesselness model on frames with vessel-mask targets.

    One epoch is a shuffled pass over all frames. Returns the model and
    the mean loss per epoch. ``epochs == 0`` returns the freshly
    initialized model untouched.
    """
    if isinstance(dataset, DatasetHandle):
        clips = [dataset.load(name) for name in dataset.sequences]
    else:
        clips = list(dataset)
    if not clips:
        raise ValueError("empty vesselness training dataset")
    frames, masks = [], []
    for clip in clips:
        if clip.vessel_mask is None:
            raise ValueError("vesselness training requires vessel_mask targets")
        frames.append(clip.frames)
        masks.append(clip.vessel_mask.astype(np.float32))
    frames = np.concatenate(frames)
    masks = np.concatenate(masks)

    torch.manual_seed(seed)
    model = VesselnessModel(base_width=base_width)
    if epochs == 0:
        return model, []
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)

    @torch.no_grad()
    def dataset_loss() -> float:
        # dataset-level dice, independent of batch grouping
        inter = denom = 0.0
        for i in range(0, len(frames), 16):
            x = torch.from_numpy(np.ascontiguousarray(frames[i : i + 16]))
            y = torch.from_numpy(np.ascontiguousarray(masks[i : i + 16]))
            pred = model(x)
            inter += float((y * pred).sum())
            denom += float((y**2).sum() + (pred**2).sum())
        return 1.0 - (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)

    history = []
    for epoch in range(epochs):
        # cosine decay keeps late epochs from bouncing around the optimum
        decayed = lr * 0.5 * (1.0 + np.cos(np.pi * epoch / epochs))
        for group in optimizer.param_groups:
            group["lr"] = decayed
        rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
        order = rng.permutation(len(frames))
        for i in range(0, len(order), batch):
            idx = order[i : i + batch]
            x = torch.from_numpy(np.ascontiguousarray(frames[idx]))
            y = torch.from_numpy(np.ascontiguousarray(masks[idx]))
            loss = stabilized_dice_loss(y, model(x))
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite vesselness loss at epoch {epoch}, batch {i // batch}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        history.append(dataset_loss())
    return model, history


def save_vesselness(model: VesselnessModel, path) -> Path:
    path = Path(path)
    save_checkpoint(path, state_dict_to_blobs(model),
                    {"kind": "vesselness", "base_width": model.base_width})
    return path


def load_vesselness(path) -> VesselnessModel:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "vesselness":
        raise ValueError(f"{path}: not a vesselness checkpoint")
    model = VesselnessModel(base_width=meta["base_width"])
    from .checkpoint import load_into_module

    load_into_module(model, tensors, strict=True)
    return model


def model_checksum(model: VesselnessModel) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()[:16]


def generate_weak_labels(model: VesselnessModel, dataset: DatasetHandle) -> int:
    """Write vesselness_%04d.png next to every frame of every sequence.

    Idempotent: re-running with the same model overwrites identical files.
    Returns the number of maps written. The manifest records the checksum
    of the generating model.
    """
    checksum = model_checksum(model)
    written = 0
    for name in dataset.sequences:
        seq_dir = dataset.root / name
        meta_path = seq_dir / "sequence.json"
        with open(meta_path) as fh:
            record = json.load(fh)
        clip = dataset.load(name)
        maps = model.predict(clip.frames)
        if maps.shape != clip.frames.shape:
            raise ValueError(f"{name}: weak map shape {maps.shape} != frames {clip.frames.shape}")
        weak_names = []
        for t in range(clip.num_frames):
            fname = f"vesselness_{t:04d}.png"
            _save_gray(seq_dir / fname, maps[t])
            weak_names.append(fname)
            written += 1
        record["weak_labels"] = weak_names
        record["weak_label_model"] = checksum
        with open(meta_path, "w") as fh:
            json.dump(record, fh, indent=1, sort_keys=True)

    manifest_path = dataset.root / "manifest.json"
    if manifest_path.exists():
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        manifest["weak_label_model"] = checksum
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
    return written
