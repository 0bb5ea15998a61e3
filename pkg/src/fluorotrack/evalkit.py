"""Metrics and ablation harness.

RMSE is computed per sequence (root of the mean squared pixel error over
annotated frames and instances, scaled to mm), then aggregated over
sequences with population statistics. Ablation runners retrain the
tracker under controlled variations and emit small aligned-text tables.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .datasets import DatasetHandle, load_manifest
from .pipeline.cropping import CropPolicy
from .pipeline.tracking import run_tracking
from .pipeline.training import train_tracker, load_tracker


def match_instances(pred0: np.ndarray, gt0: np.ndarray) -> np.ndarray:
    """Greedy frame-0 assignment: for each ground-truth instance, the nearest
    unused predicted instance. Returns the permutation applied to predictions."""
    k = len(gt0)
    taken, order = set(), np.zeros(k, dtype=int)
    for i in range(k):
        dists = [
            (np.sum((pred0[j] - gt0[i]) ** 2), j) for j in range(k) if j not in taken
        ]
        _, j = min(dists)
        order[i] = j
        taken.add(j)
    return order


def sequence_rmse(pred_traj: np.ndarray, gt_traj: np.ndarray, pixel_spacing: float) -> float:
    """Per-sequence RMSE in mm over annotated frames and instances.

    Instances are matched once, on frame 0, and the assignment stays fixed.
    """
    pred = np.asarray(pred_traj, dtype=np.float64)
    gt = np.asarray(gt_traj, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"trajectory shapes differ: {pred.shape} vs {gt.shape}")
    annotated = ~np.isnan(gt).any(axis=(1, 2))
    if not annotated.any():
        raise ValueError("no annotated frames overlap the prediction")
    order = match_instances(pred[np.nonzero(annotated)[0][0]], gt[np.nonzero(annotated)[0][0]])
    pred = pred[:, order]
    sq = ((pred[annotated] - gt[annotated]) ** 2).sum(axis=2)  # (frames, K)
    return float(np.sqrt(sq.mean()) * pixel_spacing)


@dataclass
class MetricsReport:
    per_sequence: list[float]
    mean: float
    median: float
    std: float
    max: float
    split: str = "all"
    fps: float = 0.0
    config_hash: str = ""
    init_mode: str = "manual"
    sequence_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))


def aggregate(values, split: str = "all", fps: float = 0.0, config_hash: str = "",
              init_mode: str = "manual", sequence_names=None) -> MetricsReport:
    """Population statistics over per-sequence RMSE values."""
    values = [float(v) for v in values]
    if not values:
        raise ValueError("cannot aggregate zero sequences")
    arr = np.asarray(values, dtype=np.float64)
    return MetricsReport(
        per_sequence=values,
        mean=float(arr.mean()),
        median=float(np.median(arr)),
        std=float(arr.std(ddof=0)),
        max=float(arr.max()),
        split=split,
        fps=fps,
        config_hash=config_hash,
        init_mode=init_mode,
        sequence_names=list(sequence_names or []),
    )


def _policy(config: RunConfig) -> CropPolicy:
    return CropPolicy(
        crop_size=(config["track.crop"], config["track.crop"]),
        border_margin=config["track.border_margin"],
        border_rule=config["track.border_rule"],
    )


def evaluate_tracker(model, dataset: DatasetHandle, config: RunConfig,
                     detector=None, splits: bool = True) -> dict:
    """Track every test sequence and report metrics for all/occlusion splits.

    Returns {"all": MetricsReport, "with_occlusion": ..., "no_occlusion": ...,
    "errors_mm": per-frame errors}; occlusion splits appear when nonempty.
    """
    manifest = load_manifest(dataset.root)
    occluded = {e["name"]: bool(e.get("occluded")) for e in manifest["sequences"]}
    policy = _policy(config)
    init_mode = config["track.init"]
    per_seq, frame_errors, times = {}, [], []
    for name in dataset.sequences:
        clip = dataset.load(name)
        result = run_tracking(
            model, clip, policy,
            window=config["track.window"],
            num_instances=clip.num_instances,
            init=init_mode, detector=detector,
            cca_threshold=config["track.cca_threshold"],
        )
        per_seq[name] = sequence_rmse(result.predictions, clip.landmarks, clip.pixel_spacing)
        annotated = ~np.isnan(clip.landmarks).any(axis=(1, 2))
        err_px = np.linalg.norm(result.predictions[annotated] - clip.landmarks[annotated], axis=2)
        frame_errors.extend((err_px * clip.pixel_spacing).ravel().tolist())
        times.append(result.frame_times)

    warmup = config["eval.warmup_frames"]
    steady = np.concatenate([t[warmup:] for t in times if len(t) > warmup]) if times else np.array([])
    fps = float(len(steady) / steady.sum()) if steady.size and steady.sum() > 0 else 0.0

    def _report(names, split):
        values = [per_seq[n] for n in names]
        return aggregate(values, split=split, fps=fps, config_hash=config.config_hash,
                         init_mode=init_mode, sequence_names=names)

    out = {"all": _report(list(per_seq), "all"), "errors_mm": frame_errors}
    if splits:
        with_occ = [n for n in per_seq if occluded.get(n)]
        without = [n for n in per_seq if not occluded.get(n)]
        if with_occ:
            out["with_occlusion"] = _report(with_occ, "with_occlusion")
        if without:
            out["no_occlusion"] = _report(without, "no_occlusion")
    return out


def measure_fps(model, clips, config: RunConfig, warmup: int | None = None) -> float:
    """Steady-state tracking throughput; the first ``warmup`` frames per
    sequence are excluded. Runs single-threaded over completed sequences."""
    warmup = config["eval.warmup_frames"] if warmup is None else warmup
    policy = _policy(config)
    frames, seconds = 0, 0.0
    for clip in clips:
        result = run_tracking(model, clip, policy, window=config["track.window"],
                              num_instances=clip.num_instances,
                              cca_threshold=config["track.cca_threshold"])
        steady = result.frame_times[warmup:]
        frames += len(steady)
        seconds += float(steady.sum())
    if frames == 0 or seconds <= 0:
        raise ValueError("sequences too short to measure steady-state FPS")
    return frames / seconds


def render_table(rows: list[dict], columns: list[str]) -> str:
    """Aligned-column text table; floats rendered with 3 decimals."""
    def fmt(value):
        return f"{value:.3f}" if isinstance(value, float) else str(value)

    cells = [[fmt(row.get(c, "")) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) if cells else len(c)
              for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def write_report(out_dir, name: str, reports: dict, table_rows=None, table_columns=None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {}
    for key, value in reports.items():
        payload[key] = value.to_dict() if isinstance(value, MetricsReport) else value
    with open(out_dir / f"{name}.json", "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
    if table_rows is not None:
        with open(out_dir / f"{name}.txt", "w") as fh:
            fh.write(render_table(table_rows, table_columns) + "\n")


def write_csv(path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in columns})


def error_histogram(errors_mm, bins: int = 20) -> list[dict]:
    """Per-frame error distribution as CSV-ready bins."""
    errors = np.asarray(list(errors_mm), dtype=np.float64)
    if errors.size == 0:
        return []
    counts, edges = np.histogram(errors, bins=bins)
    return [
        {"bin_left": float(edges[i]), "bin_right": float(edges[i + 1]), "count": int(counts[i])}
        for i in range(len(counts))
    ]


def _metric_row(label: str, reports: list[dict]) -> dict:
    """Average the mean/std/max columns of several seeds' reports."""
    return {
        "mean": float(np.mean([r["all"].mean for r in reports])),
        "std": float(np.mean([r["all"].std for r in reports])),
        "max": float(np.mean([r["all"].max for r in reports])),
        "label": label,
    }


def run_ablation_pretraining(train_ds: DatasetHandle, test_ds: DatasetHandle, config: RunConfig,
                             out_dir, checkpoints: dict, seeds=(0, 1, 2)) -> dict:
    """Rows: no pretraining / reconstruction-only / reconstruction+vesselness.

    ``checkpoints`` maps "reconstruction" and "reconstruction+vesselness"
    to pretraining checkpoint paths; missing entries raise by name.
    """
    out_dir = Path(out_dir)
    rows_spec = [("none", None)]
    for label in ("reconstruction", "reconstruction+vesselness"):
        if label not in checkpoints:
            raise ValueError(f"missing pretraining checkpoint for {label!r}")
        rows_spec.append((label, checkpoints[label]))

    table, per_seed = [], {}
    for label, ckpt in rows_spec:
        reports = []
        for seed in seeds:
            run_dir = out_dir / f"{label.replace('+', '_')}-seed{seed}"
            ckpt_path = train_tracker(train_ds, config, run_dir, pretrained=ckpt, seed=seed)
            model = load_tracker(ckpt_path)
            reports.append(evaluate_tracker(model, test_ds, config, splits=False))
        per_seed[label] = [r["all"].mean for r in reports]
        row = _metric_row(label, reports)
        row["pretraining"] = label
        table.append(row)

    result = {"rows": table, "seeds": list(seeds), "per_seed_mean": per_seed}
    columns = ["pretraining", "mean", "std", "max"]
    write_report(out_dir, "ablation_pretraining", {"table": table, "per_seed_mean": per_seed},
                 table_rows=table, table_columns=columns)
    write_csv(out_dir / "ablation_pretraining.csv", table, columns)
    return result


def run_ablation_tokens(train_ds: DatasetHandle, test_ds: DatasetHandle, config: RunConfig,
                        out_dir, pretrained, seeds=(0, 1, 2)) -> dict:
    """2x2 matrix over appearance/trajectory correlation tokens."""
    out_dir = Path(out_dir)
    table, per_seed = [], {}
    for use_phi in (False, True):
        for use_c in (False, True):
            label = f"appearance={'on' if use_phi else 'off'},trajectory={'on' if use_c else 'off'}"
            variant = RunConfig(values={**config.values,
                                        "track.appearance_tokens": use_phi,
                                        "track.trajectory_tokens": use_c})
            reports = []
            for seed in seeds:
                run_dir = out_dir / f"phi{int(use_phi)}_c{int(use_c)}-seed{seed}"
                ckpt_path = train_tracker(train_ds, variant, run_dir, pretrained=pretrained, seed=seed)
                model = load_tracker(ckpt_path)
                reports.append(evaluate_tracker(model, test_ds, variant, splits=False))
            per_seed[label] = [r["all"].max for r in reports]
            row = _metric_row(label, reports)
            row.update({"appearance": "on" if use_phi else "off",
                        "trajectory": "on" if use_c else "off"})
            table.append(row)

    result = {"rows": table, "seeds": list(seeds), "per_seed_max": per_seed}
    columns = ["appearance", "trajectory", "mean", "std", "max"]
    write_report(out_dir, "ablation_tokens", {"table": table, "per_seed_max": per_seed},
                 table_rows=table, table_columns=columns)
    write_csv(out_dir / "ablation_tokens.csv", table, columns)
    return result
