"""Frame-level supervision derived from first-occurrence clip labels.

Frames inside any labeled first-occurrence interval are positives.  Safe
negatives can only come from before the earliest labeled start, since the
same activity may repeat unlabeled later in the video; a seeded fraction
of those candidates is sampled as negatives.  Everything else stays
unlabeled (masked out of the frame losses).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AnnotationError, ConfigError


@dataclass(frozen=True)
class FirstOccurrence:
    """Earliest labeled instance of one class, half-open frame interval."""

    class_id: int
    start: int
    end: int


@dataclass
class FrameSupervision:
    fg_labels: np.ndarray      # (T,) float32 0/1, meaningful where fg_label_mask is set
    fg_label_mask: np.ndarray  # (T,) float32 0/1, frames usable by the foreground BCE
    cond_labels: np.ndarray    # (T, C) float32 multi-hot class labels
    fg_frame_mask: np.ndarray  # (T,) float32 0/1, frames usable by the conditional loss
    is_bg_only: bool


def _validate(annotations, video_len: int, num_classes: int) -> None:
    seen = set()
    for a in annotations:
        if not 0 <= a.class_id < num_classes:
            raise AnnotationError(f"class {a.class_id} outside [0, {num_classes})")
        if a.class_id in seen:
            raise AnnotationError(f"duplicate first occurrence for class {a.class_id}")
        seen.add(a.class_id)
        if not 0 <= a.start < a.end:
            raise AnnotationError(f"bad interval [{a.start}, {a.end}) for class {a.class_id}")
        if a.end > video_len:
            raise AnnotationError(
                f"interval [{a.start}, {a.end}) for class {a.class_id} exceeds video length {video_len}"
            )


def bg_candidate_region(annotations: list[FirstOccurrence], video_len: int) -> tuple[int, int]:
    """Half-open frame range of safe background candidates: everything
    strictly before the earliest labeled start, or the whole video when
    there are no annotations."""
    if not annotations:
        return (0, video_len)
    return (0, min(a.start for a in annotations))


def derive_supervision(
    annotations: list[FirstOccurrence],
    video_len: int,
    num_classes: int,
    bg_fraction: float,
    seed,
) -> FrameSupervision:
    """Build frame labels for one video.

    The negative sample has size ceil(bg_fraction * |candidates|), drawn
    uniformly without replacement; the draw is fixed by `seed`.
    """
    if not 0.0 <= bg_fraction <= 1.0:
        raise ConfigError(f"bg_fraction must be in [0, 1], got {bg_fraction}")
    if video_len < 1:
        raise AnnotationError(f"video_len must be >= 1, got {video_len}")
    _validate(annotations, video_len, num_classes)

    fg_labels = np.zeros(video_len, dtype=np.float32)
    fg_label_mask = np.zeros(video_len, dtype=np.float32)
    cond_labels = np.zeros((video_len, num_classes), dtype=np.float32)

    for a in annotations:
        fg_labels[a.start:a.end] = 1.0
        fg_label_mask[a.start:a.end] = 1.0
        cond_labels[a.start:a.end, a.class_id] = 1.0
    fg_frame_mask = fg_labels.copy()

    lo, hi = bg_candidate_region(annotations, video_len)
    n_candidates = hi - lo
    if n_candidates > 0 and bg_fraction > 0.0:
        n_neg = int(np.ceil(bg_fraction * n_candidates))
        rng = np.random.default_rng(seed)
        chosen = rng.choice(n_candidates, size=n_neg, replace=False) + lo
        fg_label_mask[chosen] = 1.0  # labels already 0 there

    return FrameSupervision(
        fg_labels=fg_labels,
        fg_label_mask=fg_label_mask,
        cond_labels=cond_labels,
        fg_frame_mask=fg_frame_mask,
        is_bg_only=not annotations,
    )
