"""Loss terms and their weighted composition.

Per video:

* frame BCE between (thresholded) foreground scores and the derived
  frame labels, over labeled frames only;
* an L1 "total mass" penalty on foreground scores of background-only
  videos;
* a total-variation smoothness penalty on the foreground score sequence;
* multi-label BCE on conditional scores over foreground frames only;
* multi-label BCE on the top-k video scores against video-level labels.

Each mean is normalized by its own element count so the weights keep
their meaning across videos of different valid lengths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError


@dataclass(frozen=True)
class LossWeights:
    foreground_weight: float = 0.5    # scales the whole foreground loss
    conditional_weight: float = 1.0   # scales the conditional-score loss
    bg_only_weight: float = 0.01      # scales the L1 mass term, inside the foreground loss
    smoothness_weight: float = 0.1    # scales the total-variation term, inside the foreground loss

    def __post_init__(self):
        for name in ("foreground_weight", "conditional_weight", "bg_only_weight", "smoothness_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


@dataclass
class LossBreakdown:
    """Scalar values of every term, as logged per training step."""

    l_ce: float
    l_bg_only: float
    l_laplacian: float
    l_foreground: float
    l_cs: float
    l_video: float
    l_total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "l_ce": self.l_ce,
            "l_bg_only": self.l_bg_only,
            "l_laplacian": self.l_laplacian,
            "l_foreground": self.l_foreground,
            "l_cs": self.l_cs,
            "l_video": self.l_video,
            "l_total": self.l_total,
        }


def bce_foreground(f_scores: nx.Tensor, labels, label_mask) -> tuple[nx.Tensor, int]:
    """Mean BCE over labeled frames; returns (loss, labeled-frame count).

    Count 0 flags a video that contributed nothing (loss is constant 0).
    """
    count = int(np.asarray(label_mask, dtype=bool).sum())
    return nx.bce_mean(f_scores, labels, label_mask), count


def total_mass_bg(f_scores: nx.Tensor, valid_mask, is_bg_only: bool) -> nx.Tensor:
    """L1 mass of foreground scores, active only for background-only videos."""
    if not is_bg_only:
        return nx.scalar(0.0)
    return nx.masked_abs_mean(f_scores, valid_mask)


def laplacian_reg(f_scores: nx.Tensor, valid_mask) -> nx.Tensor:
    """Total variation of the foreground score over consecutive valid frames."""
    return nx.total_variation(f_scores, valid_mask)


def conditional_loss(cond_scores: nx.Tensor, frame_labels, fg_mask) -> tuple[nx.Tensor, int]:
    """Mean multi-label BCE over (foreground frame, class) pairs.

    Background-only videos have an empty fg_mask and contribute exactly 0.
    """
    fg = np.asarray(fg_mask, dtype=bool)
    mask2d = np.broadcast_to(fg[:, None], cond_scores.data.shape)
    return nx.bce_mean(cond_scores, frame_labels, mask2d), int(fg.sum())


def video_loss(video_scores: nx.Tensor, video_labels) -> nx.Tensor:
    """Mean multi-label BCE between top-k video scores and video labels."""
    return nx.bce_mean(video_scores, video_labels, np.ones_like(video_scores.data, dtype=bool))


def total_loss(
    l_ce: nx.Tensor,
    l_bg_only: nx.Tensor,
    l_laplacian: nx.Tensor,
    l_cs: nx.Tensor,
    l_video: nx.Tensor,
    weights: LossWeights,
) -> tuple[nx.Tensor, LossBreakdown]:
    """Compose the foreground loss and the overall training loss.

    foreground = ce + bg_w * bg_only + smooth_w * laplacian
    total      = video + fg_w * foreground + cond_w * cs
    """
    components = {
        "l_ce": l_ce, "l_bg_only": l_bg_only, "l_laplacian": l_laplacian,
        "l_cs": l_cs, "l_video": l_video,
    }
    for name, t in components.items():
        if not np.isfinite(t.data).all():
            raise FloatingPointError(f"loss component {name} is not finite: {t.data!r}")
    l_fg = nx.add(
        l_ce,
        nx.add(nx.smul(l_bg_only, weights.bg_only_weight), nx.smul(l_laplacian, weights.smoothness_weight)),
    )
    total = nx.add(
        l_video,
        nx.add(nx.smul(l_fg, weights.foreground_weight), nx.smul(l_cs, weights.conditional_weight)),
    )
    breakdown = LossBreakdown(
        l_ce=l_ce.item(),
        l_bg_only=l_bg_only.item(),
        l_laplacian=l_laplacian.item(),
        l_foreground=l_fg.item(),
        l_cs=l_cs.item(),
        l_video=l_video.item(),
        l_total=total.item(),
    )
    return total, breakdown
