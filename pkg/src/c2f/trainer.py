"""Batch assembly, the training loop, checkpointing, and the three-arm
ablation protocol.

All three arms share one loss composition,

    total = video + fg_w * (ce + bg_w * bg_only + smooth_w * laplacian) + cond_w * cs

with terms pinned to constant zero where an arm has no use for them:

* ``FO``        -- frame supervision only: `ce` is the BCE pushing sampled
  background frames to zero, `cs` the multi-label BCE on labeled
  foreground frames; both applied to the single head's class scores.
* ``FO+VL``     -- adds the video-level BCE on the top-k class scores.
* ``FO+VL+PD``  -- the full two-head decomposition with all five terms.

Supervision is derived once per (run seed, video) and reused across
epochs; with one seed the whole run is bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import losses as L
from . import numerics as nx
from .errors import ConfigError
from .evaluation import PROTOCOLS, EvalReport, evaluate, write_report
from .inference import InferenceConfig, run_inference
from .labeling import FirstOccurrence, FrameSupervision, derive_supervision
from .model import (
    MODE_FO,
    MODE_FO_VL,
    MODE_FULL,
    MODES,
    ModelConfig,
    ModelParams,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .synthdata import Manifest, load_manifest, pad_to_length, read_features

_SUPERVISION_STREAM = 0
_SHUFFLE_STREAM = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 1e-4
    epochs: int = 30
    seed: int = 0
    mode: str = MODE_FULL
    bg_fraction: float = 0.2
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if not 0.0 <= self.bg_fraction <= 1.0:
            raise ConfigError(f"bg_fraction must be in [0, 1], got {self.bg_fraction}")


@dataclass
class BatchItem:
    video_id: str
    features: np.ndarray       # (T, D) float32, zero-padded
    mask: np.ndarray           # (T,)  float32 validity
    video_labels: np.ndarray   # (C,)  float32
    supervision: FrameSupervision


@dataclass
class Batch:
    items: list[BatchItem]

    @property
    def features(self) -> np.ndarray:
        return np.stack([it.features for it in self.items])

    @property
    def masks(self) -> np.ndarray:
        return np.stack([it.mask for it in self.items])


def _clip_annotations(video, t_max: int) -> list[FirstOccurrence]:
    """First occurrences clipped to the padded window; ones entirely
    beyond it are dropped."""
    out = []
    for s in video.first_occurrences:
        if s.start >= t_max:
            continue
        out.append(FirstOccurrence(s.class_id, s.start, min(s.end, t_max)))
    return out


def _pad_supervision(sup: FrameSupervision, t_max: int, num_classes: int) -> FrameSupervision:
    def pad1(a):
        out = np.zeros(t_max, dtype=np.float32)
        out[:a.shape[0]] = a
        return out

    cond = np.zeros((t_max, num_classes), dtype=np.float32)
    cond[:sup.cond_labels.shape[0]] = sup.cond_labels
    return FrameSupervision(
        fg_labels=pad1(sup.fg_labels),
        fg_label_mask=pad1(sup.fg_label_mask),
        cond_labels=cond,
        fg_frame_mask=pad1(sup.fg_frame_mask),
        is_bg_only=sup.is_bg_only,
    )


def make_batch(manifest: Manifest, indices, t_max: int, bg_fraction: float, seed: int) -> Batch:
    """Load, pad and label the given manifest entries.

    The negative-sampling seed is derived from (run seed, video index), so
    a video's supervision is identical in every epoch of one run.
    """
    items = []
    for idx in indices:
        video = manifest.videos[int(idx)]
        features = read_features(manifest.feature_path(video))
        padded, mask = pad_to_length(features, t_max)
        video_len = int(mask.sum())
        annotations = _clip_annotations(video, video_len)
        sup = derive_supervision(
            annotations, video_len, manifest.num_classes, bg_fraction,
            np.random.SeedSequence((seed, _SUPERVISION_STREAM, int(idx))),
        )
        items.append(BatchItem(
            video_id=video.video_id,
            features=padded,
            mask=mask,
            video_labels=np.asarray(video.labels, dtype=np.float32),
            supervision=_pad_supervision(sup, t_max, manifest.num_classes),
        ))
    return Batch(items)


def video_losses(bundle, item: BatchItem, weights: L.LossWeights, mode: str):
    """Per-video loss terms for one arm, all composed through total_loss."""
    sup = item.supervision
    if mode == MODE_FULL:
        l_ce, _ = L.bce_foreground(bundle.foreground_thresholded, sup.fg_labels, sup.fg_label_mask)
        l_bg = L.total_mass_bg(bundle.foreground_scores, item.mask, sup.is_bg_only)
        l_lap = L.laplacian_reg(bundle.foreground_scores, item.mask)
        l_cs, _ = L.conditional_loss(bundle.conditional_scores, sup.cond_labels, sup.fg_frame_mask)
        l_video = L.video_loss(bundle.video_scores, item.video_labels)
    else:
        neg_mask = sup.fg_label_mask.astype(bool) & ~sup.fg_frame_mask.astype(bool)
        neg2d = np.broadcast_to(neg_mask[:, None], bundle.action_scores.data.shape)
        l_ce = nx.bce_mean(bundle.action_scores, np.zeros_like(bundle.action_scores.data), neg2d)
        l_cs, _ = L.conditional_loss(bundle.action_scores, sup.cond_labels, sup.fg_frame_mask)
        l_bg = nx.scalar(0.0)
        l_lap = nx.scalar(0.0)
        l_video = L.video_loss(bundle.video_scores, item.video_labels) if mode == MODE_FO_VL else nx.scalar(0.0)
    return L.total_loss(l_ce, l_bg, l_lap, l_cs, l_video, weights)


def train_step(params: ModelParams, state: nx.AdamState, batch: Batch, config: TrainConfig) -> L.LossBreakdown:
    """One optimizer step over a batch; returns the batch-mean breakdown."""
    tape = nx.Tape()
    totals: list[nx.Tensor] = []
    breakdowns: list[L.LossBreakdown] = []
    with tape:
        for item in batch.items:
            bundle = forward(params, item.features, item.mask)
            total, bd = video_losses(bundle, item, config.weights, config.mode)
            totals.append(total)
            breakdowns.append(bd)
        batch_total = totals[0]
        for t in totals[1:]:
            batch_total = nx.add(batch_total, t)
        batch_total = nx.smul(batch_total, 1.0 / len(totals))
    params.zero_grads()
    tape.backward(batch_total)
    nx.adam_step(params.named_params(), state)

    n = len(breakdowns)
    return L.LossBreakdown(
        l_ce=sum(b.l_ce for b in breakdowns) / n,
        l_bg_only=sum(b.l_bg_only for b in breakdowns) / n,
        l_laplacian=sum(b.l_laplacian for b in breakdowns) / n,
        l_foreground=sum(b.l_foreground for b in breakdowns) / n,
        l_cs=sum(b.l_cs for b in breakdowns) / n,
        l_video=sum(b.l_video for b in breakdowns) / n,
        l_total=batch_total.item(),
    )


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    history: list[L.LossBreakdown]
    epoch_checkpoints: list[Path]


def train(config: TrainConfig, manifest: Manifest | str | Path, out_dir) -> TrainResult:
    """Train one arm; writes a checkpoint every epoch plus the final one,
    and a JSON-lines log with every loss term per step."""
    if not isinstance(manifest, Manifest):
        manifest = load_manifest(manifest)
    if manifest.feature_dim != config.model.feature_dim:
        raise ConfigError(
            f"manifest feature_dim {manifest.feature_dim} != model feature_dim {config.model.feature_dim}"
        )
    if manifest.num_classes != config.model.num_classes:
        raise ConfigError(
            f"manifest num_classes {manifest.num_classes} != model num_classes {config.model.num_classes}"
        )
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)

    params = init_params(config.model, config.seed, config.mode)
    state = nx.AdamState.for_params(params.named_params(), learning_rate=config.learning_rate)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((config.seed, _SHUFFLE_STREAM)))
    n = len(manifest.videos)
    if n == 0:
        raise ConfigError("manifest has no videos")

    history: list[L.LossBreakdown] = []
    epoch_checkpoints: list[Path] = []
    log_path = out / "training_log.jsonl"
    step = 0
    with open(log_path, "w") as log:
        for epoch in range(config.epochs):
            order = shuffle_rng.permutation(n)
            for lo in range(0, n, config.batch_size):
                chunk = order[lo:lo + config.batch_size]
                batch = make_batch(manifest, chunk, config.model.max_frames, config.bg_fraction, config.seed)
                try:
                    breakdown = train_step(params, state, batch, config)
                except FloatingPointError as exc:
                    last = history[-1].as_dict() if history else {}
                    raise FloatingPointError(
                        f"non-finite loss at step {step} (epoch {epoch}): {exc}; last breakdown: {last}"
                    ) from exc
                history.append(breakdown)
                log.write(json.dumps({"step": step, "epoch": epoch, **breakdown.as_dict()}) + "\n")
                step += 1
            ckpt = out / "checkpoints" / f"epoch_{epoch:03d}.c2f"
            save_checkpoint(params, ckpt)
            epoch_checkpoints.append(ckpt)
    final = out / "checkpoint.c2f"
    save_checkpoint(params, final)
    return TrainResult(final, log_path, history, epoch_checkpoints)


_MODE_DIRS = {MODE_FO: "fo", MODE_FO_VL: "fo_vl", MODE_FULL: "fo_vl_pd"}


@dataclass
class AblationArm:
    mode: str
    checkpoint_path: Path
    predictions_path: Path
    reports: dict[str, EvalReport]


def ablate(
    config: TrainConfig,
    train_manifest: Manifest | str | Path,
    test_manifest: Manifest | str | Path,
    inference_config: InferenceConfig,
    out_dir,
) -> dict[str, AblationArm]:
    """Train and evaluate all three arms on one corpus with one seed."""
    if not isinstance(train_manifest, Manifest):
        train_manifest = load_manifest(train_manifest)
    if not isinstance(test_manifest, Manifest):
        test_manifest = load_manifest(test_manifest)
    out = Path(out_dir)
    arms: dict[str, AblationArm] = {}
    for mode in MODES:
        arm_dir = out / _MODE_DIRS[mode]
        result = train(replace(config, mode=mode), train_manifest, arm_dir)
        params = load_checkpoint(result.checkpoint_path)
        preds_path = run_inference(params, test_manifest, inference_config, arm_dir / "predictions.json")
        reports = {}
        for protocol in PROTOCOLS:
            report = evaluate(preds_path, test_manifest, protocol)
            write_report(report, arm_dir / f"report_{protocol}.json", arm_dir / f"report_{protocol}.txt")
            reports[protocol] = report
        arms[mode] = AblationArm(mode, result.checkpoint_path, preds_path, reports)

    summary = {
        "format": "c2f-ablation/1",
        "arms": {
            mode: {
                protocol: arms[mode].reports[protocol].to_json_dict()
                for protocol in PROTOCOLS
            }
            for mode in MODES
        },
    }
    with open(out / "ablation_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    lines = ["arm        protocol            avg mAP x100"]
    for mode in MODES:
        for protocol in PROTOCOLS:
            avg = arms[mode].reports[protocol].average_map
            cell = f"{100.0 * avg:.1f}" if avg is not None else "-"
            lines.append(f"{mode:<10s} {protocol:<18s}  {cell}")
    (out / "ablation_summary.txt").write_text("\n".join(lines) + "\n")
    return arms
