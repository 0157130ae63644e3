"""Turn frame-level action scores into temporal segment predictions.

Classes whose video-level score misses the gate emit nothing.  For the
rest, maximal runs of frames at or above the frame threshold become
candidate segments, runs separated by at most `merge_gap` background
frames merge, and anything shorter than `min_length` is dropped.  A
segment's confidence is the maximum action score inside it.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import ModelParams, ScoreBundle, forward
from .synthdata import Manifest, load_manifest, pad_to_length, read_features

PREDICTIONS_FORMAT = "c2f-predictions/1"


@dataclass(frozen=True)
class InferenceConfig:
    video_threshold: float = 0.1
    frame_threshold: float = 0.2
    min_length: int = 1
    merge_gap: int = 1

    def __post_init__(self):
        if not 0.0 <= self.video_threshold <= 1.0 or not 0.0 <= self.frame_threshold <= 1.0:
            raise ConfigError("thresholds must be in [0, 1]")
        if self.min_length < 1:
            raise ConfigError(f"min_length must be >= 1, got {self.min_length}")
        if self.merge_gap < 0:
            raise ConfigError(f"merge_gap must be >= 0, got {self.merge_gap}")


@dataclass(frozen=True)
class SegmentPrediction:
    video_id: str
    class_id: int
    start: int
    end: int
    score: float


def _runs(above: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True, as half-open intervals."""
    padded = np.concatenate(([False], above, [False]))
    delta = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(delta == 1)
    ends = np.flatnonzero(delta == -1)
    return list(zip(starts.tolist(), ends.tolist()))


def _merge(runs: list[tuple[int, int]], gap: int) -> list[tuple[int, int]]:
    merged: list[list[int]] = []
    for s, e in runs:
        if merged and s - merged[-1][1] <= gap:
            merged[-1][1] = e
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged]


def propose_segments(bundle: ScoreBundle, config: InferenceConfig, video_id: str) -> list[SegmentPrediction]:
    scores = bundle.action_scores.data
    gates = bundle.video_scores.data
    predictions: list[SegmentPrediction] = []
    for c in range(scores.shape[1]):
        if gates[c] < config.video_threshold:
            continue
        col = scores[:, c]
        for s, e in _merge(_runs(col >= config.frame_threshold), config.merge_gap):
            if e - s < config.min_length:
                continue
            predictions.append(SegmentPrediction(video_id, c, s, e, float(col[s:e].max())))
    return predictions


def worker_count(n_items: int) -> int:
    """Parallelism for per-video forward passes, capped by C2F_THREADS."""
    cap = os.environ.get("C2F_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_items)) if n_items else 1


def run_inference(params: ModelParams, manifest: Manifest | str, config: InferenceConfig, out_path) -> Path:
    """Predict segments for every video in the manifest and write them
    sorted by (video, class, start).  Re-running with the same checkpoint
    reproduces the file byte for byte."""
    if not isinstance(manifest, Manifest):
        manifest = load_manifest(manifest)
    cfg = params.config
    if manifest.feature_dim != cfg.feature_dim:
        raise ConfigError(
            f"manifest feature_dim {manifest.feature_dim} != checkpoint feature_dim {cfg.feature_dim}"
        )
    if manifest.num_classes != cfg.num_classes:
        raise ConfigError(
            f"manifest num_classes {manifest.num_classes} != checkpoint num_classes {cfg.num_classes}"
        )

    def predict(video) -> list[SegmentPrediction]:
        features = read_features(manifest.feature_path(video))
        padded, mask = pad_to_length(features, cfg.max_frames)
        bundle = forward(params, padded, mask)
        return propose_segments(bundle, config, video.video_id)

    predictions: list[SegmentPrediction] = []
    if manifest.videos:
        with ThreadPoolExecutor(max_workers=worker_count(len(manifest.videos))) as pool:
            for batch in pool.map(predict, manifest.videos):
                predictions.extend(batch)
    predictions.sort(key=lambda p: (p.video_id, p.class_id, p.start))

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": PREDICTIONS_FORMAT,
        "predictions": [
            {"video": p.video_id, "class": p.class_id, "start": p.start, "end": p.end, "score": p.score}
            for p in predictions
        ],
    }
    with open(out_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_path


def load_predictions(path) -> list[SegmentPrediction]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != PREDICTIONS_FORMAT:
        raise ConfigError(f"{path}: unknown predictions format {doc.get('format')!r}")
    return [
        SegmentPrediction(d["video"], int(d["class"]), int(d["start"]), int(d["end"]), float(d["score"]))
        for d in doc["predictions"]
    ]
