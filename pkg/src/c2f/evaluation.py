"""Temporal IoU, per-class average precision, and mAP reports under the
first-occurrence and all-occurrence protocols.

AP follows the standard detection protocol: predictions ranked by
confidence, each greedily matched to the unmatched ground-truth segment of
the same video with the highest IoU, step-wise sum(dR * P) integration.
At the 0.0 threshold a match needs strictly positive overlap; higher
thresholds use >=.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, ValidationError
from .inference import SegmentPrediction, load_predictions
from .synthdata import Manifest, load_manifest

PROTOCOL_FIRST = "first-occurrence"
PROTOCOL_ALL = "all-occurrence"
PROTOCOLS = (PROTOCOL_FIRST, PROTOCOL_ALL)

DEFAULT_IOU_THRESHOLDS = (0.0, 0.1, 0.2)

EVAL_FORMAT = "c2f-eval/1"


def temporal_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    """Intersection over union of two half-open intervals."""
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def average_precision(preds, gts, iou_threshold: float) -> float | None:
    """AP for one class.

    preds: (video_id, start, end, score) tuples; gts: (video_id, start, end).
    Returns None when there is nothing to score (no gts and no preds);
    0.0 when predictions exist but ground truth does not.
    """
    if not gts and not preds:
        return None
    if not gts:
        return 0.0
    ranked = sorted(preds, key=lambda p: (-p[3], p[1], p[0], p[2]))
    by_video: dict[str, list[int]] = {}
    for j, g in enumerate(gts):
        by_video.setdefault(g[0], []).append(j)
    matched = [False] * len(gts)
    ap = 0.0
    true_positives = 0
    for rank, p in enumerate(ranked, start=1):
        best_iou = 0.0
        best_j = -1
        for j in by_video.get(p[0], []):
            if matched[j]:
                continue
            iou = temporal_iou((p[1], p[2]), (gts[j][1], gts[j][2]))
            if iou > best_iou:
                best_iou = iou
                best_j = j
        hit = best_iou > iou_threshold if iou_threshold == 0.0 else best_iou >= iou_threshold
        if hit and best_j >= 0:
            matched[best_j] = True
            true_positives += 1
            ap += (1.0 / len(gts)) * (true_positives / rank)
    return ap


@dataclass
class EvalReport:
    protocol: str
    iou_thresholds: tuple[float, ...]
    per_class_ap: dict[int, dict[float, float | None]]
    per_class_avg: dict[int, float | None]
    map_per_threshold: dict[float, float | None]
    average_map: float | None

    def to_json_dict(self) -> dict:
        return {
            "format": EVAL_FORMAT,
            "protocol": self.protocol,
            "iou_thresholds": list(self.iou_thresholds),
            "per_class": {
                str(c): {
                    "ap": {f"{t:g}": self.per_class_ap[c][t] for t in self.iou_thresholds},
                    "average": self.per_class_avg[c],
                }
                for c in sorted(self.per_class_ap)
            },
            "map": {f"{t:g}": self.map_per_threshold[t] for t in self.iou_thresholds},
            "average_map": self.average_map,
        }

    def to_table(self) -> str:
        def cell(v: float | None) -> str:
            return f"{100.0 * v:6.1f}" if v is not None else "     -"

        header = "class      " + "".join(f"  @{t:<4g}" for t in self.iou_thresholds) + "     AVG"
        lines = [f"protocol: {self.protocol}  (mAP@IoU x100)", header]
        for c in sorted(self.per_class_ap):
            row = f"class {c:<5d}" + "".join(f"  {cell(self.per_class_ap[c][t])}" for t in self.iou_thresholds)
            lines.append(row + f"  {cell(self.per_class_avg[c])}")
        map_row = "mAP        " + "".join(f"  {cell(self.map_per_threshold[t])}" for t in self.iou_thresholds)
        lines.append(map_row + f"  {cell(self.average_map)}")
        return "\n".join(lines) + "\n"


def _first_occurrence_view(preds, first_end: dict[tuple[str, int], int]):
    """Clip predictions to [0, first-occurrence end) per (video, class);
    drop predictions starting at or after that end.  Videos without a
    first occurrence of the class keep everything."""
    kept = []
    for p in preds:
        key = (p.video_id, p.class_id)
        if key in first_end:
            t_end = first_end[key]
            if p.start >= t_end:
                continue
            kept.append(SegmentPrediction(p.video_id, p.class_id, p.start, min(p.end, t_end), p.score))
        else:
            kept.append(p)
    return kept


def evaluate(
    predictions: list[SegmentPrediction] | str | Path,
    manifest: Manifest | str | Path,
    protocol: str,
    iou_thresholds=DEFAULT_IOU_THRESHOLDS,
) -> EvalReport:
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}, expected one of {PROTOCOLS}")
    if not isinstance(manifest, Manifest):
        manifest = load_manifest(manifest)
    if not isinstance(predictions, list):
        predictions = load_predictions(predictions)

    known = {v.video_id for v in manifest.videos}
    unknown = sorted({p.video_id for p in predictions} - known)
    if unknown:
        raise ValidationError(f"predictions reference unknown videos: {', '.join(unknown)}")

    num_classes = manifest.num_classes
    if protocol == PROTOCOL_ALL:
        missing = [v.video_id for v in manifest.videos if v.all_occurrences is None]
        if missing:
            raise ConfigError(
                f"manifest lacks all-occurrence ground truth for {len(missing)} videos (e.g. {missing[0]})"
            )
        gt_segments = [(v.video_id, s.class_id, s.start, s.end)
                       for v in manifest.videos for s in v.all_occurrences]
    else:
        gt_segments = [(v.video_id, s.class_id, s.start, s.end)
                       for v in manifest.videos for s in v.first_occurrences]
        first_end = {(v.video_id, s.class_id): s.end
                     for v in manifest.videos for s in v.first_occurrences}
        predictions = _first_occurrence_view(predictions, first_end)

    thresholds = tuple(iou_thresholds)
    per_class_ap: dict[int, dict[float, float | None]] = {}
    per_class_avg: dict[int, float | None] = {}
    for c in range(num_classes):
        preds_c = [(p.video_id, p.start, p.end, p.score) for p in predictions if p.class_id == c]
        gts_c = [(g[0], g[2], g[3]) for g in gt_segments if g[1] == c]
        per_class_ap[c] = {t: average_precision(preds_c, gts_c, t) for t in thresholds}
        defined = [v for v in per_class_ap[c].values() if v is not None]
        per_class_avg[c] = sum(defined) / len(defined) if defined else None

    map_per_threshold: dict[float, float | None] = {}
    for t in thresholds:
        defined = [per_class_ap[c][t] for c in range(num_classes) if per_class_ap[c][t] is not None]
        map_per_threshold[t] = sum(defined) / len(defined) if defined else None
    defined_maps = [v for v in map_per_threshold.values() if v is not None]
    average_map = sum(defined_maps) / len(defined_maps) if defined_maps else None

    return EvalReport(protocol, thresholds, per_class_ap, per_class_avg, map_per_threshold, average_map)


def write_report(report: EvalReport, json_path, table_path=None) -> None:
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    with open(json_path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if table_path is not None:
        with open(table_path, "w") as fh:
            fh.write(report.to_table())
