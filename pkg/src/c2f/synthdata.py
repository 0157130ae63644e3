"""Seeded synthetic corpora of long feature sequences with planted rare
segments.

Frames outside any segment are background-prototype plus Gaussian noise;
frames inside a segment get that class's prototype (co-occurring classes
average theirs).  Per-class frame budgets are fixed up front from the
configured presence rates, so measured rates land on target instead of
drifting with sampling noise.  Train manifests export only first
occurrences; test manifests additionally carry the hidden all-occurrence
segments for evaluation.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

FEATURE_MAGIC = b"C2FV"
MANIFEST_FORMAT = "c2f-manifest/1"


@dataclass(frozen=True)
class CorpusConfig:
    num_videos: int = 250
    frames_per_video: int = 240
    feature_dim: int = 32
    num_classes: int = 4
    presence_rates: tuple = (0.008, 0.002, 0.013, 0.007)
    mean_durations: tuple = (23, 19, 28, 19)
    sep_scale: float = 1.0
    noise_scale: float = 0.25
    co_occurrence: float = 0.25
    bg_only_fraction: float = 0.35
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if min(self.num_videos, self.frames_per_video, self.feature_dim, self.num_classes) < 1:
            raise ConfigError("num_videos, frames_per_video, feature_dim, num_classes must be >= 1")
        if len(self.presence_rates) != self.num_classes or len(self.mean_durations) != self.num_classes:
            raise ConfigError("presence_rates and mean_durations must have one entry per class")
        if any(not 0.0 <= r < 1.0 for r in self.presence_rates):
            raise ConfigError(f"presence rates must be in [0, 1), got {self.presence_rates}")
        if any(d < 1 for d in self.mean_durations):
            raise ConfigError(f"mean durations must be >= 1, got {self.mean_durations}")
        if not 0.0 <= self.co_occurrence <= 1.0:
            raise ConfigError(f"co_occurrence must be in [0, 1], got {self.co_occurrence}")
        if not 0.0 <= self.bg_only_fraction < 1.0:
            raise ConfigError(f"bg_only_fraction must be in [0, 1), got {self.bg_only_fraction}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.feature_dim < self.num_classes:
            raise ConfigError("feature_dim must be >= num_classes for distinct prototypes")
        if self.sep_scale < 0 or self.noise_scale < 0:
            raise ConfigError("sep_scale and noise_scale must be >= 0")


@dataclass(frozen=True)
class Segment:
    class_id: int
    start: int
    end: int


@dataclass
class VideoRecord:
    video_id: str
    path: str
    length: int
    labels: list[int]
    first_occurrences: list[Segment]
    all_occurrences: list[Segment] | None = None


@dataclass
class Manifest:
    path: Path
    split: str
    num_classes: int
    feature_dim: int
    videos: list[VideoRecord] = field(default_factory=list)

    def feature_path(self, video: VideoRecord) -> Path:
        return self.path.parent / video.path


def write_features(path, features: np.ndarray) -> None:
    """16-byte header (magic, u32 T, u32 D, u32 reserved) then row-major
    little-endian float32 frames."""
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise ConfigError(f"features must be (T, D), got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", FEATURE_MAGIC, arr.shape[0], arr.shape[1], 0))
        fh.write(arr.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != FEATURE_MAGIC:
            raise OSError(f"corrupt feature file {path}: bad header")
        _, n_frames, dim, _ = struct.unpack("<4sIII", header)
        payload = fh.read()
    expected = 4 * n_frames * dim
    if len(payload) != expected:
        raise OSError(f"corrupt feature file {path}: expected {expected} payload bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(n_frames, dim).astype(np.float32)


def pad_to_length(features: np.ndarray, n_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad or truncate to `n_frames`; the mask marks real frames."""
    t = features.shape[0]
    mask = np.zeros(n_frames, dtype=np.float32)
    out = np.zeros((n_frames, features.shape[1]), dtype=np.float32)
    keep = min(t, n_frames)
    out[:keep] = features[:keep]
    mask[:keep] = 1.0
    return out, mask


def _segments_to_json(segments: list[Segment]) -> list[dict]:
    return [{"class": s.class_id, "start": s.start, "end": s.end} for s in segments]


def _segments_from_json(items) -> list[Segment]:
    return [Segment(int(d["class"]), int(d["start"]), int(d["end"])) for d in items]


def write_manifest(manifest: Manifest) -> None:
    doc = {
        "format": MANIFEST_FORMAT,
        "split": manifest.split,
        "num_classes": manifest.num_classes,
        "feature_dim": manifest.feature_dim,
        "videos": [],
    }
    for v in manifest.videos:
        entry = {
            "id": v.video_id,
            "path": v.path,
            "length": v.length,
            "labels": v.labels,
            "first_occurrences": _segments_to_json(v.first_occurrences),
        }
        if v.all_occurrences is not None:
            entry["all_occurrences"] = _segments_to_json(v.all_occurrences)
        doc["videos"].append(entry)
    manifest.path.parent.mkdir(parents=True, exist_ok=True)
    with open(manifest.path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> Manifest:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MANIFEST_FORMAT:
        raise ConfigError(f"{path}: unknown manifest format {doc.get('format')!r}")
    manifest = Manifest(
        path=path,
        split=doc["split"],
        num_classes=int(doc["num_classes"]),
        feature_dim=int(doc["feature_dim"]),
    )
    for entry in doc["videos"]:
        manifest.videos.append(VideoRecord(
            video_id=entry["id"],
            path=entry["path"],
            length=int(entry["length"]),
            labels=[int(b) for b in entry["labels"]],
            first_occurrences=_segments_from_json(entry["first_occurrences"]),
            all_occurrences=(
                _segments_from_json(entry["all_occurrences"]) if "all_occurrences" in entry else None
            ),
        ))
    return manifest


def class_prototypes(config: CorpusConfig, rng: np.random.Generator) -> np.ndarray:
    """Mutually orthogonal class prototypes at distance sep_scale from the
    zero background prototype."""
    raw = rng.standard_normal((config.feature_dim, config.num_classes))
    q, r = np.linalg.qr(raw)
    q = q * np.sign(np.diag(r))  # fix QR sign ambiguity for reproducibility
    return (q.T * config.sep_scale).astype(np.float64)


def _place_segments(config: CorpusConfig, labeled_by_split: dict[str, list[int]], rng: np.random.Generator):
    """Place per-class segments into labeled videos until each class's
    frame budget is spent.  Budgets are split proportionally between train
    and test so every class has ground truth in both splits; same-class
    segments never overlap within a video."""
    t = config.frames_per_video
    total_frames = config.num_videos * t
    all_labeled = [v for ids in labeled_by_split.values() for v in ids]
    budgets = [int(round(r * total_frames)) for r in config.presence_rates]
    if sum(budgets) > 0 and not all_labeled:
        raise ConfigError("presence rates are positive but every video is background-only")
    capacity = len(all_labeled) * t
    if sum(budgets) > 0.6 * capacity:
        raise ConfigError(
            f"presence rates need {sum(budgets)} foreground frames but only "
            f"{capacity} labeled-video frames exist; segments cannot fit"
        )
    segments: dict[int, list[Segment]] = {vid: [] for vid in all_labeled}
    global_index: dict[str, list[tuple[int, Segment]]] = {s: [] for s in labeled_by_split}
    share = {
        split: len(ids) / len(all_labeled) if all_labeled else 0.0
        for split, ids in labeled_by_split.items()
    }
    for c in range(config.num_classes):
        mean_dur = config.mean_durations[c]
        for split, ids in labeled_by_split.items():
            if not ids:
                continue
            remaining = int(round(budgets[c] * share[split]))
            while remaining > 0:
                duration = int(min(rng.geometric(1.0 / mean_dur), t, remaining))
                placed = False
                for _ in range(200):
                    other = [(v, s) for v, s in global_index[split] if s.class_id != c]
                    if other and rng.random() < config.co_occurrence:
                        vid, base = other[int(rng.integers(len(other)))]
                        start = min(base.start, t - duration)
                    else:
                        vid = ids[int(rng.integers(len(ids)))]
                        start = int(rng.integers(0, t - duration + 1))
                    candidate = Segment(c, start, start + duration)
                    same = [s for s in segments[vid] if s.class_id == c]
                    if any(s.start < candidate.end and candidate.start < s.end for s in same):
                        continue
                    segments[vid].append(candidate)
                    global_index[split].append((vid, candidate))
                    remaining -= duration
                    placed = True
                    break
                if not placed:
                    raise ConfigError(
                        f"could not place a {duration}-frame segment of class {c}; rates too dense"
                    )
    for segs in segments.values():
        segs.sort(key=lambda s: (s.class_id, s.start))
    return segments


@dataclass
class CorpusPaths:
    root: Path
    train_manifest: Path
    test_manifest: Path
    stats: Path


def generate_corpus(config: CorpusConfig, out_dir) -> CorpusPaths:
    """Write train/ and test/ corpora plus an exact imbalance report.

    Deterministic given config.seed: same seed, bit-identical features and
    manifests.
    """
    out = Path(out_dir)
    rng = np.random.default_rng(config.seed)
    protos = class_prototypes(config, rng)

    n = config.num_videos
    n_train = int(round(config.train_fraction * n))
    if n_train < 1 or n_train >= n:
        raise ConfigError(f"train_fraction {config.train_fraction} leaves an empty split for {n} videos")
    split_of = ["train"] * n_train + ["test"] * (n - n_train)

    labeled_by_split: dict[str, list[int]] = {}
    for split, ids in (("train", range(n_train)), ("test", range(n_train, n))):
        ids = list(ids)
        n_bg = int(round(config.bg_only_fraction * len(ids)))
        bg = set(rng.choice(len(ids), size=n_bg, replace=False).tolist())
        labeled_by_split[split] = [ids[i] for i in range(len(ids)) if i not in bg]

    segments = _place_segments(config, labeled_by_split, rng)

    t = config.frames_per_video
    manifests = {
        split: Manifest(
            path=out / split / "manifest.json",
            split=split,
            num_classes=config.num_classes,
            feature_dim=config.feature_dim,
        )
        for split in ("train", "test")
    }
    (out / "train" / "features").mkdir(parents=True, exist_ok=True)
    (out / "test" / "features").mkdir(parents=True, exist_ok=True)

    class_frames = np.zeros(config.num_classes, dtype=np.int64)
    fg_frames = 0
    bg_only_videos = 0

    for vid in range(n):
        split = split_of[vid]
        video_id = f"v{vid:05d}"
        segs = sorted(segments.get(vid, []), key=lambda s: (s.class_id, s.start))
        active = np.zeros((t, config.num_classes), dtype=bool)
        for s in segs:
            active[s.start:s.end, s.class_id] = True
        class_frames += active.sum(axis=0)
        fg_frames += int(active.any(axis=1).sum())
        if not segs:
            bg_only_videos += 1

        proto_per_frame = np.zeros((t, config.feature_dim), dtype=np.float64)
        any_active = active.any(axis=1)
        if any_active.any():
            counts = active.sum(axis=1, keepdims=True)
            proto_per_frame[any_active] = (active[any_active] @ protos) / counts[any_active]
        noise = rng.standard_normal((t, config.feature_dim)) * config.noise_scale
        features = (proto_per_frame + noise).astype(np.float32)

        rel_path = f"features/{video_id}.c2fv"
        write_features(out / split / rel_path, features)

        labels = [0] * config.num_classes
        first: dict[int, Segment] = {}
        for s in segs:
            labels[s.class_id] = 1
            if s.class_id not in first or s.start < first[s.class_id].start:
                first[s.class_id] = s
        record = VideoRecord(
            video_id=video_id,
            path=rel_path,
            length=t,
            labels=labels,
            first_occurrences=sorted(first.values(), key=lambda s: s.class_id),
            all_occurrences=sorted(segs, key=lambda s: (s.class_id, s.start)) if split == "test" else None,
        )
        manifests[split].videos.append(record)

    for manifest in manifests.values():
        write_manifest(manifest)

    total = n * t
    stats = _stats_dict(config.num_classes, total, n, class_frames, fg_frames, bg_only_videos,
                        basis="generation")
    stats_path = out / "stats.json"
    with open(stats_path, "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return CorpusPaths(out, manifests["train"].path, manifests["test"].path, stats_path)


def _stats_dict(num_classes, total_frames, num_videos, class_frames, fg_frames, bg_only_videos, basis):
    per_class = {}
    for c in range(num_classes):
        all_pct = 100.0 * class_frames[c] / total_frames if total_frames else 0.0
        fg_pct = 100.0 * class_frames[c] / fg_frames if fg_frames else 0.0
        per_class[str(c)] = {
            "all_frames_pct": all_pct,
            "foreground_frames_pct": fg_pct,
            "improvement_ratio": (fg_pct / all_pct) if all_pct > 0 else 0.0,
        }
    return {
        "basis": basis,
        "num_videos": num_videos,
        "total_frames": int(total_frames),
        "foreground_frames": int(fg_frames),
        "foreground_pct": 100.0 * fg_frames / total_frames if total_frames else 0.0,
        "bg_only_videos": int(bg_only_videos),
        "per_class": per_class,
    }


def corpus_stats(manifest_path) -> dict:
    """Recount the imbalance report from a manifest.

    Uses all-occurrence segments when the manifest carries them, otherwise
    falls back to first occurrences only (reported in "basis").  Verifies
    that every referenced feature file exists.
    """
    manifest = load_manifest(manifest_path)
    missing = [str(manifest.feature_path(v)) for v in manifest.videos
               if not os.path.exists(manifest.feature_path(v))]
    if missing:
        raise OSError("missing feature files: " + ", ".join(missing))

    has_all = all(v.all_occurrences is not None for v in manifest.videos)
    class_frames = np.zeros(manifest.num_classes, dtype=np.int64)
    fg_frames = 0
    total = 0
    bg_only = 0
    for v in manifest.videos:
        segs = v.all_occurrences if has_all else v.first_occurrences
        active = np.zeros((v.length, manifest.num_classes), dtype=bool)
        for s in segs:
            active[s.start:s.end, s.class_id] = True
        class_frames += active.sum(axis=0)
        fg_frames += int(active.any(axis=1).sum())
        total += v.length
        if not segs:
            bg_only += 1
    return _stats_dict(
        manifest.num_classes, total, len(manifest.videos), class_frames, fg_frames, bg_only,
        basis="all-occurrence" if has_all else "first-occurrence-only",
    )
