"""Run configuration files.

A run config is a JSON document with sections corpus / model / loss /
train / inference / eval.  Every key has a default below; unknown keys are
rejected; the fully resolved config is echoed into the output directory so
runs are self-describing.  The "paper" preset restores the published
full-scale settings (T=3600, batch 16, lr 1e-5); the default "desk" preset
is sized for minutes-scale CPU runs.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigError
from .inference import InferenceConfig
from .losses import LossWeights
from .model import ModelConfig
from .synthdata import CorpusConfig
from .trainer import TrainConfig

DEFAULTS: dict = {
    "preset": "desk",
    "corpus": {
        "num_videos": 250,
        "frames_per_video": 240,
        "feature_dim": 32,
        "num_classes": 4,
        "presence_rates": [0.008, 0.002, 0.013, 0.007],
        "mean_durations": [23, 19, 28, 19],
        "sep_scale": 1.0,
        "noise_scale": 0.25,
        "co_occurrence": 0.25,
        "bg_only_fraction": 0.35,
        "train_fraction": 0.8,
        "seed": 0,
    },
    "model": {
        "feature_dim": 32,
        "num_classes": 4,
        "max_frames": 240,
        "hidden_sizes": [1024, 512],
        "kernel_width": 3,
        "fg_threshold": 0.05,
        "topk_ratio": 0.01,
    },
    "loss": {
        "foreground_weight": 0.5,
        "conditional_weight": 1.0,
        "bg_only_weight": 0.01,
        "smoothness_weight": 0.1,
    },
    "train": {
        "batch_size": 8,
        "learning_rate": 1e-4,
        "epochs": 30,
        "seed": 0,
        "mode": "FO+VL+PD",
        "bg_fraction": 0.2,
    },
    "inference": {
        "video_threshold": 0.1,
        "frame_threshold": 0.2,
        "min_length": 1,
        "merge_gap": 1,
    },
    "eval": {
        "iou_thresholds": [0.0, 0.1, 0.2],
    },
}

PRESETS: dict[str, dict] = {
    "desk": {},
    "paper": {
        "model": {"max_frames": 3600},
        "train": {"batch_size": 16, "learning_rate": 1e-5},
    },
}


def _merge_checked(base: dict, override: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {path}{key!r} must be an object")
            out[key] = _merge_checked(base[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def load_run_config(path=None, seed_override: int | None = None) -> dict:
    """Resolve defaults + preset + file overrides (in that order)."""
    overrides: dict = {}
    if path is not None:
        with open(path) as fh:
            overrides = json.load(fh)
        if not isinstance(overrides, dict):
            raise ConfigError(f"{path}: run config must be a JSON object")
    preset_name = overrides.get("preset", DEFAULTS["preset"])
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}, expected one of {sorted(PRESETS)}")
    resolved = _merge_checked(DEFAULTS, PRESETS[preset_name], "")
    resolved = _merge_checked(resolved, overrides, "")
    if seed_override is not None:
        resolved["corpus"]["seed"] = int(seed_override)
        resolved["train"]["seed"] = int(seed_override)
    return resolved


def echo_resolved(resolved: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config_resolved.json"
    with open(path, "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def corpus_config(resolved: dict) -> CorpusConfig:
    c = resolved["corpus"]
    return CorpusConfig(
        num_videos=int(c["num_videos"]),
        frames_per_video=int(c["frames_per_video"]),
        feature_dim=int(c["feature_dim"]),
        num_classes=int(c["num_classes"]),
        presence_rates=tuple(float(r) for r in c["presence_rates"]),
        mean_durations=tuple(int(d) for d in c["mean_durations"]),
        sep_scale=float(c["sep_scale"]),
        noise_scale=float(c["noise_scale"]),
        co_occurrence=float(c["co_occurrence"]),
        bg_only_fraction=float(c["bg_only_fraction"]),
        train_fraction=float(c["train_fraction"]),
        seed=int(c["seed"]),
    )


def model_config(resolved: dict) -> ModelConfig:
    m = resolved["model"]
    return ModelConfig(
        feature_dim=int(m["feature_dim"]),
        num_classes=int(m["num_classes"]),
        max_frames=int(m["max_frames"]),
        hidden_sizes=tuple(int(h) for h in m["hidden_sizes"]),
        kernel_width=int(m["kernel_width"]),
        fg_threshold=float(m["fg_threshold"]),
        topk_ratio=float(m["topk_ratio"]),
    )


def loss_weights(resolved: dict) -> LossWeights:
    w = resolved["loss"]
    return LossWeights(
        foreground_weight=float(w["foreground_weight"]),
        conditional_weight=float(w["conditional_weight"]),
        bg_only_weight=float(w["bg_only_weight"]),
        smoothness_weight=float(w["smoothness_weight"]),
    )


def train_config(resolved: dict, mode_override: str | None = None) -> TrainConfig:
    t = resolved["train"]
    return TrainConfig(
        batch_size=int(t["batch_size"]),
        learning_rate=float(t["learning_rate"]),
        epochs=int(t["epochs"]),
        seed=int(t["seed"]),
        mode=mode_override or t["mode"],
        bg_fraction=float(t["bg_fraction"]),
        weights=loss_weights(resolved),
        model=model_config(resolved),
    )


def inference_config(resolved: dict) -> InferenceConfig:
    i = resolved["inference"]
    return InferenceConfig(
        video_threshold=float(i["video_threshold"]),
        frame_threshold=float(i["frame_threshold"]),
        min_length=int(i["min_length"]),
        merge_gap=int(i["merge_gap"]),
    )


def iou_thresholds(resolved: dict) -> tuple[float, ...]:
    return tuple(float(t) for t in resolved["eval"]["iou_thresholds"])


def describe_defaults(sections: list[str]) -> str:
    """Human-readable key/default listing for --help epilogs."""
    lines = ["config keys and defaults:"]
    lines.append(f"  preset = {DEFAULTS['preset']!r}  (one of {sorted(PRESETS)})")
    for section in sections:
        lines.append(f"  [{section}]")
        for key, value in DEFAULTS[section].items():
            lines.append(f"    {section}.{key} = {value!r}")
    return "\n".join(lines)
