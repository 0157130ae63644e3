"""Float32 tensors and the linear tape used for the reverse sweep."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ContractError


class Tensor:
    """A float32 array with an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float32))
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        tag = f" '{self.name}'" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape})"


@dataclass
class OpRecord:
    """One recorded primitive: inputs, output, and its local backward rule."""

    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], tuple]


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of primitive ops enabling a single reverse sweep.

    Ops are appended in creation order; since every input of an op already
    exists when the op runs, append order is a topological order.  A tape
    can be swept exactly once.
    """

    def __init__(self):
        self.ops: list[OpRecord] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _ACTIVE.pop()
        assert popped is self
        return False

    def backward(self, loss: Tensor) -> None:
        """Populate gradients of everything reachable from `loss`."""
        if self._spent:
            raise ContractError("tape already swept; record a fresh tape before calling backward again")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if not np.isfinite(loss.data).all():
            raise FloatingPointError("loss is not finite")
        if not any(rec.output is loss for rec in self.ops):
            raise ContractError("loss was not produced by ops recorded on this tape")
        self._spent = True
        loss.grad = np.ones_like(loss.data)
        for rec in reversed(self.ops):
            gout = rec.output.grad
            if gout is None:
                continue
            for tensor, g in zip(rec.inputs, rec.backward(gout)):
                if g is not None:
                    tensor.accumulate_grad(g)


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def record(name: str, inputs: tuple[Tensor, ...], output: Tensor, backward) -> Tensor:
    """Attach an op to the active tape, if any, and return its output."""
    tape = active_tape()
    if tape is not None:
        tape.ops.append(OpRecord(name, inputs, output, backward))
    return output
