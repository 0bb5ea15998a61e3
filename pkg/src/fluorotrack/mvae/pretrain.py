"""Pretraining loop: masked reconstruction + weak-label prediction.

Sampling is stateless: step ``s`` draws from ``SeedSequence([seed, s])``,
so a resumed run continues the exact trajectory of an uninterrupted one.
One mask plan is drawn per step and shared across the batch.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
import torch

from ..checkpoint import load_checkpoint, save_checkpoint, state_dict_to_blobs
from ..config import RunConfig
from ..datasets import DatasetHandle
from .losses import loss_pretrain
from .masking import build_mask_plan
from .model import MaskedVideoAutoencoder


def build_autoencoder(config: RunConfig) -> MaskedVideoAutoencoder:
    return MaskedVideoAutoencoder(
        dim=config["model.dim"],
        dim_lo=config["model.dim_lo"],
        encoder_depth=config["model.encoder_depth"],
        decoder_depth=config["model.decoder_depth"],
        num_heads=config["model.heads"],
        patch=config["model.patch"],
    )


def cosine_lr(step: int, total: int, base: float, warmup_frac: float) -> float:
    warmup = max(1, int(round(total * warmup_frac)))
    if step < warmup:
        return base * (step + 1) / warmup
    progress = (step - warmup) / max(1, total - warmup)
    return base * 0.5 * (1.0 + math.cos(math.pi * progress))


def optimizer_blobs(optimizer) -> tuple[dict, list]:
    blobs = {}
    sd = optimizer.state_dict()
    for idx, state in sd["state"].items():
        for key, val in state.items():
            arr = val.detach().cpu().numpy() if torch.is_tensor(val) else np.asarray(val)
            blobs[f"opt.{idx}.{key}"] = arr
    return blobs, sd["param_groups"]


def load_optimizer_blobs(optimizer, tensors: dict, param_groups: list) -> None:
    sd = optimizer.state_dict()
    state: dict = {}
    for name, arr in tensors.items():
        if not name.startswith("opt."):
            continue
        _, idx, key = name.split(".", 2)
        state.setdefault(int(idx), {})[key] = torch.as_tensor(arr.copy())
    sd["state"] = state
    sd["param_groups"] = param_groups
    optimizer.load_state_dict(sd)


def _sample_batch(clips, rng, window: int, crop: int, batch: int):
    frames, weak = [], []
    for _ in range(batch):
        clip = clips[int(rng.integers(len(clips)))]
        if clip.num_frames < window:
            raise ValueError(f"sequence too short for a {window}-frame window")
        start = int(rng.integers(clip.num_frames - window + 1))
        fr = clip.frames[start : start + window]
        wk = clip.weak_labels[start : start + window]
        if crop:
            h, w = fr.shape[1:]
            oy = int(rng.integers(h - crop + 1))
            ox = int(rng.integers(w - crop + 1))
            fr = fr[:, oy : oy + crop, ox : ox + crop]
            wk = wk[:, oy : oy + crop, ox : ox + crop]
        frames.append(fr)
        weak.append(wk)
    to_t = lambda arrs: torch.from_numpy(np.ascontiguousarray(np.stack(arrs), dtype=np.float32))
    return to_t(frames), to_t(weak)


def pretrain(dataset: DatasetHandle, config: RunConfig, out_dir,
             resume=None, stop_after: int | None = None) -> Path:
    """Train the autoencoder on a weak-labeled dataset; returns the checkpoint path.

    ``stop_after`` interrupts the run after that many steps of this
    invocation (the learning-rate schedule still spans the configured
    total), leaving a checkpoint a later call can resume from. A
    non-finite loss aborts after writing the last good parameter state.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.dump(out_dir)
    ckpt_path = out_dir / "pretrain.ckpt"
    curve_path = out_dir / "loss_curve.csv"

    clips = [dataset.load(name, with_weak_labels=True) for name in dataset.sequences]
    if not clips:
        raise ValueError(f"{dataset.root}: empty dataset")
    for name, clip in zip(dataset.sequences, clips):
        if clip.weak_labels is None:
            raise ValueError(f"{name}: missing weak vesselness labels; run the offline labeler")

    seed = config.seed
    torch.manual_seed(seed)
    model = build_autoencoder(config)
    optimizer = torch.optim.Adam(model.parameters(), lr=config["pretrain.lr"])

    steps = config["pretrain.steps"]
    start_step = 0
    if resume is not None:
        tensors, meta = load_checkpoint(resume)
        model_blobs = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
        from ..checkpoint import load_into_module

        load_into_module(model, model_blobs, strict=True)
        load_optimizer_blobs(optimizer, tensors, meta["param_groups"])
        start_step = meta["step"]

    window = config["pretrain.frames"]
    crop = config["pretrain.crop"]
    batch = config["pretrain.batch"]
    alpha, beta = config["pretrain.alpha"], config["pretrain.beta"]
    patch = config["model.patch"]
    sample_h = crop if crop else clips[0].frames.shape[1]
    sample_w = crop if crop else clips[0].frames.shape[2]
    tokens_per_frame = (sample_h // patch) * (sample_w // patch)

    def save(step):
        blobs = state_dict_to_blobs(model)
        opt_blobs, param_groups = optimizer_blobs(optimizer)
        blobs.update(opt_blobs)
        meta = {
            "kind": "pretrain",
            "step": step,
            "seed": seed,
            "config_hash": config.config_hash,
            "dims": model.config_dims(),
            "alpha": alpha,
            "beta": beta,
            "param_groups": param_groups,
        }
        save_checkpoint(ckpt_path, blobs, meta)

    end_step = steps if stop_after is None else min(steps, start_step + stop_after)
    curve = []
    last_good = {k: v.detach().clone() for k, v in model.state_dict().items()}
    for step in range(start_step, end_step):
        rng = np.random.default_rng(np.random.SeedSequence([seed, step]))
        frames, weak = _sample_batch(clips, rng, window, crop, batch)
        plan = build_mask_plan(
            window,
            tokens_per_frame,
            tube_ratio=config["pretrain.tube_ratio"],
            frame_ratio=config["pretrain.frame_ratio"],
            rng=rng,
            tube_frame_mode=config["pretrain.tube_frames"],
        )
        lr = cosine_lr(step, steps, config["pretrain.lr"], config["pretrain.warmup_frac"])
        for group in optimizer.param_groups:
            group["lr"] = lr

        recon, weak_pred = model.forward_pretrain(frames, plan)
        total, reco, weak_term = loss_pretrain(frames, recon, weak, weak_pred, plan, alpha, beta, patch)
        if not torch.isfinite(total):
            model.load_state_dict(last_good)
            save(step)
            raise RuntimeError(
                f"non-finite loss at step {step} (reco={float(reco.detach())}, weak={float(weak_term.detach())}); "
                f"last good state saved to {ckpt_path}"
            )
        optimizer.zero_grad()
        total.backward()
        optimizer.step()
        last_good = {k: v.detach().clone() for k, v in model.state_dict().items()}
        curve.append((step, float(reco.detach()), float(weak_term.detach()), float(total.detach())))

    save(end_step)
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss_reconstruction", "loss_weak", "loss_total"])
        writer.writerows(curve)
    return ckpt_path
