"""Minimal reverse-mode differentiation core.

Tensors hold float32 numpy arrays.  Operations executed while a Tape is
active are recorded in creation order (which is already topological), so a
single reverse sweep over the tape populates gradients.  The op set is
exactly what the frame-scoring model and its losses need; this is not a
general-purpose autodiff.
"""

from .adam import AdamState, adam_step
from .ops import (
    add,
    bce_mean,
    conv1d_temporal,
    fully_connected,
    masked_abs_mean,
    mul,
    relu,
    reshape,
    scalar,
    select_column,
    sigmoid,
    smul,
    stack_scalars,
    sum_all,
    threshold,
    topk_mean,
    total_variation,
)
from .tensor import Tape, Tensor, active_tape

__all__ = [
    "AdamState",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "add",
    "bce_mean",
    "conv1d_temporal",
    "fully_connected",
    "masked_abs_mean",
    "mul",
    "relu",
    "reshape",
    "scalar",
    "select_column",
    "sigmoid",
    "smul",
    "stack_scalars",
    "sum_all",
    "threshold",
    "topk_mean",
    "total_variation",
]
