"""Run configuration: defaults <- config file <- command-line overrides.

Config files are YAML; nested mappings flatten to dotted keys. A top-level
``include:`` list pulls in other files first (relative to the including
file), later sources winning. Unknown keys are rejected with a
nearest-match suggestion. The resolved tree is hashed so every artifact
can be traced back to the exact configuration that produced it.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

DATA_ROOT_ENV = "FLUOROTRACK_DATA_ROOT"


def _to_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _to_optional_int(value):
    if value is None:
        return None
    text = str(value).strip().lower()
    if text in ("none", "null", ""):
        return None
    return int(value)


@dataclass(frozen=True)
class Field:
    default: object
    cast: object
    choices: tuple | None = None


def _field(default, cast=None, choices=None) -> Field:
    if cast is None:
        cast = type(default)
        if cast is bool:
            cast = _to_bool
    return Field(default=default, cast=cast, choices=choices)


SCHEMA: dict[str, Field] = {
    "seed": _field(0),
    "data.root": _field("data"),
    # phantom generation
    "phantom.image_size": _field(256),
    "phantom.frames": _field(24),
    "phantom.pixel_spacing": _field(0.2),
    "phantom.instances": _field(1),
    "phantom.contrast_onset": Field(4, _to_optional_int),
    "phantom.occlusion_probability": _field(0.5),
    "phantom.motion_amplitude": _field(6.0),
    "phantom.motion_period": _field(12.0),
    "phantom.motion_drift": _field(0.3),
    "phantom.noise_sigma": _field(0.01),
    "phantom.shot_noise": _field(False),
    "phantom.distractors": _field(2),
    "phantom.with_body": _field(True),
    "phantom.sequences": _field(8),
    "phantom.annotation_rate": _field(1.0),
    # vesselness weak-label model
    "vesselness.epochs": _field(60),
    "vesselness.lr": _field(1e-3),
    "vesselness.base_width": _field(16),
    "vesselness.batch": _field(4),
    # shared network dimensions
    "model.dim": _field(64),
    "model.dim_lo": _field(32),
    "model.encoder_depth": _field(4),
    "model.decoder_depth": _field(2),
    "model.heads": _field(4),
    "model.patch": _field(16),
    "model.heatmap_channels": _field(32),
    # masked-video pretraining
    "pretrain.steps": _field(300),
    "pretrain.lr": _field(2e-4),
    "pretrain.alpha": _field(1.0),
    "pretrain.beta": _field(1.0),
    "pretrain.tube_ratio": _field(0.75),
    "pretrain.frame_ratio": _field(0.98),
    "pretrain.tube_frames": _field("endpoints", choices=("endpoints", "random")),
    "pretrain.frames": _field(5),
    "pretrain.crop": _field(0),  # 0 = no spatial crop
    "pretrain.batch": _field(4),
    "pretrain.warmup_frac": _field(0.05),
    # tracker
    "track.crop": _field(256),
    "track.window": _field(5),
    "track.border_margin": _field(30),
    "track.border_rule": _field("proximity", choices=("proximity", "exceeds")),
    "track.appearance_k": _field(3),
    "track.appearance_tokens": _field(True),
    "track.trajectory_tokens": _field(True),
    "track.heatmap_sigma": _field(2.0),
    "track.cca_threshold": _field(0.5),
    "track.mca_depth": _field(2),
    "track.aux_body_mask": _field(False),
    "track.aux_weight": _field(0.5),
    "track.steps": _field(400),
    "track.lr": _field(1e-3),
    "track.batch": _field(4),
    "track.instances": _field(1),
    "track.init": _field("manual", choices=("manual", "auto")),
    # automatic-initialization detector
    "detector.steps": _field(200),
    "detector.lr": _field(1e-3),
    "detector.size": _field(64),
    # evaluation
    "eval.warmup_frames": _field(5),
    "eval.histogram_bins": _field(20),
}


class ConfigError(ValueError):
    pass


def _reject_unknown(key: str) -> None:
    close = difflib.get_close_matches(key, SCHEMA.keys(), n=1)
    hint = f" (did you mean {close[0]!r}?)" if close else ""
    raise ConfigError(f"unknown config key {key!r}{hint}")


def _flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in tree.items():
        dotted = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, dict):
            flat.update(_flatten(value, dotted))
        else:
            flat[dotted] = value
    return flat


def _load_file(path: Path, seen: set | None = None) -> dict:
    seen = seen or set()
    path = Path(path).resolve()
    if path in seen:
        raise ConfigError(f"circular include: {path}")
    seen.add(path)
    with open(path) as fh:
        tree = yaml.safe_load(fh) or {}
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: config file must be a mapping")
    includes = tree.pop("include", [])
    if isinstance(includes, str):
        includes = [includes]
    merged: dict = {}
    for inc in includes:
        merged.update(_load_file(path.parent / inc, seen))
    merged.update(_flatten(tree))
    return merged


@dataclass
class RunConfig:
    """Resolved configuration tree plus its digest."""

    values: dict

    def get(self, key: str):
        if key not in SCHEMA:
            _reject_unknown(key)
        return self.values[key]

    def __getitem__(self, key: str):
        return self.get(key)

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.values, sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def data_root(self) -> Path:
        return Path(os.environ.get(DATA_ROOT_ENV, self.values["data.root"]))

    def to_json(self) -> str:
        return json.dumps(self.values, sort_keys=True, indent=1)

    def dump(self, directory) -> None:
        """Record the resolved tree (and hash) inside an artifact directory."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        payload = {"config": self.values, "config_hash": self.config_hash}
        with open(directory / "config.json", "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)


def resolve_config(file=None, overrides: list[str] | dict | None = None,
                   seed: int | None = None) -> RunConfig:
    """Merge defaults, an optional YAML file, and ``key=value`` overrides."""
    values = {key: field.default for key, field in SCHEMA.items()}

    def _apply(key, raw, source):
        if key not in SCHEMA:
            _reject_unknown(key)
        field = SCHEMA[key]
        try:
            value = field.cast(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}") from exc
        if field.choices and value not in field.choices:
            raise ConfigError(f"{source}: {key!r} must be one of {field.choices}, got {value!r}")
        values[key] = value

    if file is not None:
        for key, raw in sorted(_load_file(Path(file)).items()):
            _apply(key, raw, str(file))

    if overrides:
        items = overrides.items() if isinstance(overrides, dict) else None
        if items is None:
            items = []
            for spec in overrides:
                if "=" not in spec:
                    raise ConfigError(f"override must look like key=value, got {spec!r}")
                key, _, raw = spec.partition("=")
                items.append((key.strip(), raw.strip()))
        for key, raw in items:
            _apply(key, raw, "override")

    if seed is not None:
        values["seed"] = int(seed)
    return RunConfig(values=values)
