"""Command-line entry point.

Subcommands cover every pipeline stage; global flags (--config, --seed,
--out, --override) resolve one configuration tree whose hash names the
artifact directory. Exit codes: 0 success, 1 stage failure, 2 usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, resolve_config


class StageError(RuntimeError):
    pass


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="YAML config file")
    common.add_argument("--override", metavar="KEY=VALUE", action="append", default=[],
                        help="set a config key (repeatable)")
    common.add_argument("--seed", type=int, default=None, help="override the run seed")
    common.add_argument("--out", metavar="DIR", default=None, help="artifact directory")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="fluorotrack",
                                     description="phantom data, pretraining, tracking, evaluation")
    stages = parser.add_subparsers(dest="stage", required=True)

    phantom = stages.add_parser("phantom", help="synthetic data")
    phantom_sub = phantom.add_subparsers(dest="action", required=True)
    phantom_sub.add_parser("generate", parents=[common], help="write a phantom dataset")

    vessel = stages.add_parser("vesselness", help="weak-label model")
    vessel_sub = vessel.add_subparsers(dest="action", required=True)
    vt = vessel_sub.add_parser("train", parents=[common], help="train the vesselness model")
    vt.add_argument("--data", required=True, help="dataset with vessel masks")
    vl = vessel_sub.add_parser("label", parents=[common], help="write weak labels offline")
    vl.add_argument("--data", required=True, help="dataset to label")
    vl.add_argument("--model", required=True, help="vesselness checkpoint")

    pre = stages.add_parser("pretrain", parents=[common], help="masked video pretraining")
    pre.add_argument("--data", required=True, help="weak-labeled dataset")
    pre.add_argument("--resume", default=None, help="checkpoint to resume from")

    track = stages.add_parser("track", help="tracker training and inference")
    track_sub = track.add_subparsers(dest="action", required=True)
    tt = track_sub.add_parser("train", parents=[common], help="train the tracker")
    tt.add_argument("--data", required=True)
    tt.add_argument("--pretrained", default=None, help="pretraining checkpoint for the encoder")
    tr = track_sub.add_parser("run", parents=[common], help="track sequences, emit trajectories")
    tr.add_argument("--data", required=True)
    tr.add_argument("--model", required=True)
    tr.add_argument("--detector", default=None)
    te = track_sub.add_parser("eval", parents=[common], help="metrics over a test dataset")
    te.add_argument("--data", required=True)
    te.add_argument("--model", required=True)
    te.add_argument("--detector", default=None)
    te.add_argument("--emit-csv", action="store_true", help="also write CSV tables")

    det = stages.add_parser("detector", help="automatic-initialization detector")
    det_sub = det.add_subparsers(dest="action", required=True)
    dt = det_sub.add_parser("train", parents=[common])
    dt.add_argument("--data", required=True)
    dt.add_argument("--pretrained", default=None)

    ab = stages.add_parser("ablate", parents=[common], help="ablation tables")
    ab.add_argument("--which", choices=("pretraining", "tokens"), required=True)
    ab.add_argument("--train-data", required=True)
    ab.add_argument("--test-data", required=True)
    ab.add_argument("--seeds", default="0,1,2", help="comma-separated tracker seeds")
    ab.add_argument("--reco-checkpoint", default=None, help="reconstruction-only pretrain ckpt")
    ab.add_argument("--full-checkpoint", default=None, help="reconstruction+vesselness ckpt")
    ab.add_argument("--pretrained", default=None, help="encoder checkpoint for the token ablation")
    return parser


def _resolve(args) -> RunConfig:
    return resolve_config(file=args.config, overrides=args.override, seed=args.seed)


def _out_dir(args, config: RunConfig, stage: str) -> Path:
    out = Path(args.out) if args.out else Path("runs") / f"{stage}-{config.config_hash}"
    out.mkdir(parents=True, exist_ok=True)
    config.dump(out)
    return out


def _phantom_config(config: RunConfig, seed: int):
    from .phantom import MotionModel, PhantomConfig

    return PhantomConfig(
        image_size=config["phantom.image_size"],
        frames_per_sequence=config["phantom.frames"],
        pixel_spacing=config["phantom.pixel_spacing"],
        num_instances=config["phantom.instances"],
        contrast_onset_frame=config["phantom.contrast_onset"],
        occlusion_probability=config["phantom.occlusion_probability"],
        motion=MotionModel(
            amplitude=config["phantom.motion_amplitude"],
            period=config["phantom.motion_period"],
            drift=config["phantom.motion_drift"],
        ),
        noise_sigma=config["phantom.noise_sigma"],
        shot_noise=config["phantom.shot_noise"],
        num_distractors=config["phantom.distractors"],
        with_body=config["phantom.with_body"],
        rng_seed=seed,
    )


def _cmd_phantom_generate(args) -> int:
    from .phantom import generate_dataset

    config = _resolve(args)
    out = _out_dir(args, config, "phantom")
    dataset = generate_dataset(
        _phantom_config(config, config.seed),
        num_sequences=config["phantom.sequences"],
        annotation_rate=config["phantom.annotation_rate"],
        root=out / "dataset",
    )
    print(f"wrote {len(dataset.sequences)} sequences to {dataset.root}")
    return 0


def _cmd_vesselness_train(args) -> int:
    from .datasets import open_dataset
    from .vesselness import save_vesselness, train_vesselness

    config = _resolve(args)
    out = _out_dir(args, config, "vesselness")
    model, history = train_vesselness(
        open_dataset(args.data),
        epochs=config["vesselness.epochs"],
        lr=config["vesselness.lr"],
        base_width=config["vesselness.base_width"],
        batch=config["vesselness.batch"],
        seed=config.seed,
    )
    path = save_vesselness(model, out / "vesselness.ckpt")
    if history:
        with open(out / "loss_curve.csv", "w") as fh:
            fh.write("step,loss\n")
            fh.writelines(f"{i},{v}\n" for i, v in enumerate(history))
    print(f"vesselness checkpoint: {path} (final loss {history[-1]:.4f})" if history
          else f"vesselness checkpoint: {path}")
    return 0


def _cmd_vesselness_label(args) -> int:
    from .datasets import open_dataset
    from .vesselness import generate_weak_labels, load_vesselness

    config = _resolve(args)
    _out_dir(args, config, "vesselness-label")
    count = generate_weak_labels(load_vesselness(args.model), open_dataset(args.data))
    print(f"wrote {count} weak label maps under {args.data}")
    return 0


def _cmd_pretrain(args) -> int:
    from .datasets import open_dataset
    from .mvae.pretrain import pretrain

    config = _resolve(args)
    out = _out_dir(args, config, "pretrain")
    path = pretrain(open_dataset(args.data), config, out, resume=args.resume)
    print(f"pretraining checkpoint: {path}")
    return 0


def _cmd_track_train(args) -> int:
    from .datasets import open_dataset
    from .pipeline.training import train_tracker

    config = _resolve(args)
    out = _out_dir(args, config, "track-train")
    path = train_tracker(open_dataset(args.data), config, out, pretrained=args.pretrained)
    print(f"tracker checkpoint: {path}")
    return 0


def _cmd_detector_train(args) -> int:
    from .datasets import open_dataset
    from .pipeline.training import train_detector

    config = _resolve(args)
    out = _out_dir(args, config, "detector")
    path = train_detector(open_dataset(args.data), config, out, pretrained=args.pretrained)
    print(f"detector checkpoint: {path}")
    return 0


def _load_models(args, config: RunConfig):
    from .pipeline.training import load_detector, load_tracker

    model = load_tracker(args.model)
    detector = None
    if config["track.init"] == "auto":
        if not args.detector:
            raise StageError("track.init=auto requires --detector")
        detector = load_detector(args.detector)
    return model, detector


def _cmd_track_run(args) -> int:
    from .datasets import open_dataset
    from .evalkit import _policy
    from .pipeline.tracking import run_tracking

    config = _resolve(args)
    out = _out_dir(args, config, "track-run")
    model, detector = _load_models(args, config)
    dataset = open_dataset(args.data)
    policy = _policy(config)
    for name in dataset.sequences:
        clip = dataset.load(name)
        result = run_tracking(
            model, clip, policy, window=config["track.window"],
            num_instances=clip.num_instances, init=config["track.init"],
            detector=detector, cca_threshold=config["track.cca_threshold"],
        )
        record = {"sequence": name, "init_mode": config["track.init"], **result.to_record()}
        with open(out / f"{name}.json", "w") as fh:
            json.dump(record, fh, sort_keys=True, indent=1)
    print(f"trajectories for {len(dataset.sequences)} sequences in {out}")
    return 0


def _cmd_track_eval(args) -> int:
    from .datasets import open_dataset
    from .evalkit import error_histogram, evaluate_tracker, render_table, write_csv, write_report

    config = _resolve(args)
    out = _out_dir(args, config, "track-eval")
    model, detector = _load_models(args, config)
    reports = evaluate_tracker(model, open_dataset(args.data), config, detector=detector)

    rows = []
    for split in ("all", "with_occlusion", "no_occlusion"):
        if split in reports:
            r = reports[split]
            rows.append({"split": split, "sequences": len(r.per_sequence), "mean": r.mean,
                         "median": r.median, "std": r.std, "max": r.max, "fps": r.fps})
    columns = ["split", "sequences", "mean", "median", "std", "max", "fps"]
    write_report(out, "metrics", reports, table_rows=rows, table_columns=columns)
    hist = error_histogram(reports["errors_mm"], bins=config["eval.histogram_bins"])
    write_csv(out / "error_histogram.csv", hist, ["bin_left", "bin_right", "count"])
    if args.emit_csv:
        write_csv(out / "metrics.csv", rows, columns)
    print(render_table(rows, columns))
    return 0


def _cmd_ablate(args) -> int:
    from .datasets import open_dataset
    from .evalkit import render_table, run_ablation_pretraining, run_ablation_tokens

    config = _resolve(args)
    out = _out_dir(args, config, f"ablate-{args.which}")
    seeds = tuple(int(s) for s in args.seeds.split(","))
    train_ds, test_ds = open_dataset(args.train_data), open_dataset(args.test_data)
    if args.which == "pretraining":
        if not args.reco_checkpoint or not args.full_checkpoint:
            raise StageError("pretraining ablation needs --reco-checkpoint and --full-checkpoint")
        result = run_ablation_pretraining(
            train_ds, test_ds, config, out,
            checkpoints={"reconstruction": args.reco_checkpoint,
                         "reconstruction+vesselness": args.full_checkpoint},
            seeds=seeds,
        )
        print(render_table(result["rows"], ["pretraining", "mean", "std", "max"]))
    else:
        if not args.pretrained:
            raise StageError("token ablation needs --pretrained encoder checkpoint")
        result = run_ablation_tokens(train_ds, test_ds, config, out, args.pretrained, seeds=seeds)
        print(render_table(result["rows"], ["appearance", "trajectory", "mean", "std", "max"]))
    return 0


_HANDLERS = {
    ("phantom", "generate"): _cmd_phantom_generate,
    ("vesselness", "train"): _cmd_vesselness_train,
    ("vesselness", "label"): _cmd_vesselness_label,
    ("pretrain", None): _cmd_pretrain,
    ("track", "train"): _cmd_track_train,
    ("track", "run"): _cmd_track_run,
    ("track", "eval"): _cmd_track_eval,
    ("detector", "train"): _cmd_detector_train,
    ("ablate", None): _cmd_ablate,
}


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    handler = _HANDLERS[(args.stage, getattr(args, "action", None))]
    try:
        return handler(args)
    except (ConfigError, StageError, FileNotFoundError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
