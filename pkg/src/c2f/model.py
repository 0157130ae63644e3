"""The two-head frame scorer: shared trunk, foreground head, conditional
action head, and top-k video-level aggregation.

Three variants share one trunk (conv + two FC layers with ReLU):

* ``FO`` and ``FO+VL`` -- a single action head emits per-frame class scores
  directly; they differ only in training losses.
* ``FO+VL+PD`` -- the full decomposition: a foreground head scores
  P(fg | frame) and the action head scores P(class | fg, frame); their
  product is the per-frame action score.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError, EmptyInputError

MODE_FO = "FO"
MODE_FO_VL = "FO+VL"
MODE_FULL = "FO+VL+PD"
MODES = (MODE_FO, MODE_FO_VL, MODE_FULL)

_MODE_CODES = {MODE_FO: 0, MODE_FO_VL: 1, MODE_FULL: 2}
_CODE_MODES = {v: k for k, v in _MODE_CODES.items()}

CHECKPOINT_MAGIC = b"C2F1"


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 32
    num_classes: int = 4
    max_frames: int = 240
    hidden_sizes: tuple[int, int] = (1024, 512)
    kernel_width: int = 3
    fg_threshold: float = 0.05
    topk_ratio: float = 0.01

    def __post_init__(self):
        if self.feature_dim < 1 or self.num_classes < 1 or self.max_frames < 1:
            raise ConfigError("feature_dim, num_classes and max_frames must all be >= 1")
        if len(self.hidden_sizes) != 2 or any(h < 1 for h in self.hidden_sizes):
            raise ConfigError(f"hidden_sizes must be two positive ints, got {self.hidden_sizes}")
        if self.kernel_width < 1 or self.kernel_width % 2 == 0:
            raise ConfigError(f"kernel_width must be odd and >= 1, got {self.kernel_width}")
        if not 0.0 <= self.fg_threshold < 1.0:
            raise ConfigError(f"fg_threshold must be in [0, 1), got {self.fg_threshold}")
        if not 0.0 < self.topk_ratio <= 1.0:
            raise ConfigError(f"topk_ratio must be in (0, 1], got {self.topk_ratio}")


class ModelParams:
    """Named parameter tensors in the fixed checkpoint order."""

    def __init__(self, config: ModelConfig, mode: str, tensors: dict[str, nx.Tensor]):
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}, expected one of {MODES}")
        self.config = config
        self.mode = mode
        self._tensors = tensors
        for name, t in tensors.items():
            t.name = name

    def param_order(self) -> list[str]:
        names = ["conv_w", "conv_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b"]
        if self.mode == MODE_FULL:
            names += ["fg_w", "fg_b"]
        return names + ["act_w", "act_b"]

    def named_params(self) -> list[tuple[str, nx.Tensor]]:
        return [(n, self._tensors[n]) for n in self.param_order()]

    def __getattr__(self, name: str) -> nx.Tensor:
        try:
            return self.__dict__["_tensors"][name]
        except KeyError:
            raise AttributeError(name) from None

    def zero_grads(self) -> None:
        for _, p in self.named_params():
            p.zero_grad()


def init_params(config: ModelConfig, seed: int, mode: str = MODE_FULL) -> ModelParams:
    """Seeded fan-in-scaled uniform weights, zero biases, foreground-head
    bias at -2 so the untrained model predicts mostly background."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}, expected one of {MODES}")
    rng = np.random.default_rng(seed)
    d = config.feature_dim
    h1, h2 = config.hidden_sizes
    k = config.kernel_width
    c = config.num_classes

    def uniform(fan_in: int, shape) -> nx.Tensor:
        s = 1.0 / np.sqrt(fan_in)
        return nx.Tensor(rng.uniform(-s, s, size=shape).astype(np.float32), requires_grad=True)

    def zeros(shape) -> nx.Tensor:
        return nx.Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)

    tensors = {
        "conv_w": uniform(k * d, (k, d, d)),
        "conv_b": zeros((d,)),
        "fc1_w": uniform(d, (d, h1)),
        "fc1_b": zeros((h1,)),
        "fc2_w": uniform(h1, (h1, h2)),
        "fc2_b": zeros((h2,)),
    }
    if mode == MODE_FULL:
        tensors["fg_w"] = uniform(h2, (h2, 1))
        tensors["fg_b"] = nx.Tensor(np.full((1,), -2.0, dtype=np.float32), requires_grad=True)
    tensors["act_w"] = uniform(h2, (h2, c))
    tensors["act_b"] = zeros((c,))
    return ModelParams(config, mode, tensors)


@dataclass
class ScoreBundle:
    """Per-frame and per-video scores from one forward pass.

    In single-head modes the foreground/conditional fields are None and
    `action_scores` is the head output itself.
    """

    foreground_scores: nx.Tensor | None   # (T,)   P(fg | frame), 0 on padding
    foreground_thresholded: nx.Tensor | None
    conditional_scores: nx.Tensor | None  # (T, C) P(class | fg, frame)
    action_scores: nx.Tensor              # (T, C) localization scores
    video_scores: nx.Tensor               # (C,)   top-k mean per class
    valid_count: int
    k: int


def threshold_foreground(f_scores: nx.Tensor, eps: float) -> nx.Tensor:
    """Zero foreground scores below eps (boundary kept); survivors keep
    their gradient, zeroed entries get none."""
    return nx.threshold(f_scores, eps)


def forward(params: ModelParams, features, mask) -> ScoreBundle:
    """Score one video.

    Padded frames (mask 0) have their features zeroed before the trunk --
    identical to the conv's own zero padding -- and their scores forced to
    0, so they can influence nothing downstream.
    """
    cfg = params.config
    x = np.asarray(features, dtype=np.float32)
    m = np.asarray(mask, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != cfg.feature_dim:
        raise DimensionError(f"features {x.shape} do not match feature_dim {cfg.feature_dim}")
    n_frames = x.shape[0]
    if m.shape != (n_frames,):
        raise DimensionError(f"mask {m.shape} does not match {n_frames} frames")
    valid = int(m.sum())
    if valid == 0:
        raise EmptyInputError("forward: no valid frames")
    k = max(1, int(cfg.topk_ratio * valid))

    xt = nx.Tensor(x)
    mask_col = nx.Tensor(m.reshape(n_frames, 1))
    h = nx.mul(xt, mask_col)
    h = nx.relu(nx.conv1d_temporal(h, params.conv_w, params.conv_b))
    h = nx.relu(nx.fully_connected(h, params.fc1_w, params.fc1_b))
    h = nx.relu(nx.fully_connected(h, params.fc2_w, params.fc2_b))

    if params.mode == MODE_FULL:
        f = nx.sigmoid(nx.fully_connected(h, params.fg_w, params.fg_b))
        f = nx.mul(nx.reshape(f, (n_frames,)), nx.Tensor(m))
        f_th = threshold_foreground(f, cfg.fg_threshold)
        cond = nx.mul(nx.sigmoid(nx.fully_connected(h, params.act_w, params.act_b)), mask_col)
        action = nx.mul(nx.reshape(f, (n_frames, 1)), cond)
    else:
        f = f_th = cond = None
        action = nx.mul(nx.sigmoid(nx.fully_connected(h, params.act_w, params.act_b)), mask_col)

    per_class = [nx.topk_mean(nx.select_column(action, c), m, k) for c in range(cfg.num_classes)]
    video = nx.stack_scalars(per_class)
    return ScoreBundle(f, f_th, cond, action, video, valid, k)


def save_checkpoint(params: ModelParams, path) -> None:
    """Binary checkpoint: magic, config fields (LE u32/f32), then each
    parameter as a shape-prefixed little-endian f32 array, in the order
    given by ``ModelParams.param_order``."""
    cfg = params.config
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack(
            "<7I2f",
            cfg.feature_dim, cfg.num_classes, cfg.max_frames, cfg.kernel_width,
            cfg.hidden_sizes[0], cfg.hidden_sizes[1], _MODE_CODES[params.mode],
            cfg.fg_threshold, cfg.topk_ratio,
        ))
        named = params.named_params()
        fh.write(struct.pack("<I", len(named)))
        for _, t in named:
            fh.write(struct.pack("<I", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            fh.write(t.data.astype("<f4").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file (bad magic {blob[:4]!r})")
    off = 4
    d, c, t_max, k, h1, h2, mode_code = struct.unpack_from("<7I", blob, off)
    off += 28
    eps, ratio = struct.unpack_from("<2f", blob, off)
    off += 8
    if mode_code not in _CODE_MODES:
        raise ConfigError(f"{path}: unknown mode code {mode_code}")
    cfg = ModelConfig(
        feature_dim=d, num_classes=c, max_frames=t_max, hidden_sizes=(h1, h2),
        kernel_width=k, fg_threshold=float(eps), topk_ratio=float(ratio),
    )
    mode = _CODE_MODES[mode_code]
    (n_tensors,) = struct.unpack_from("<I", blob, off)
    off += 4
    tensors: dict[str, nx.Tensor] = {}
    params = ModelParams(cfg, mode, tensors)
    for name in params.param_order():
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        tensors[name] = nx.Tensor(arr.copy(), requires_grad=True, name=name)
    if n_tensors != len(tensors):
        raise ConfigError(f"{path}: expected {len(tensors)} tensors, header says {n_tensors}")
    return params
