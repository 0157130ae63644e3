"""Bias-corrected Adam on named parameter lists."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor

F32 = np.float32


@dataclass
class AdamState:
    """Per-parameter moment accumulators plus the shared step counter."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, named_params, learning_rate=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        state = cls(learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon)
        for _, p in named_params:
            state.first_moment.append(np.zeros_like(p.data))
            state.second_moment.append(np.zeros_like(p.data))
        return state


def adam_step(named_params: list[tuple[str, Tensor]], state: AdamState) -> None:
    """One in-place update.  A missing gradient counts as zero; a non-finite
    gradient aborts, naming the offending parameter."""
    if len(named_params) != len(state.first_moment):
        raise DimensionError(
            f"optimizer state tracks {len(state.first_moment)} parameters, got {len(named_params)}"
        )
    state.step_count += 1
    t = state.step_count
    b1 = F32(state.beta1)
    b2 = F32(state.beta2)
    corr1 = F32(1.0 - state.beta1 ** t)
    corr2 = F32(1.0 - state.beta2 ** t)
    lr = F32(state.learning_rate)
    eps = F32(state.epsilon)
    for i, (name, p) in enumerate(named_params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for '{name}'")
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= b1
        m += (F32(1) - b1) * g
        v *= b2
        v += (F32(1) - b2) * (g * g)
        m_hat = m / corr1
        v_hat = v / corr2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
