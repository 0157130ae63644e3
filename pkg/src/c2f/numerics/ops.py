"""Differentiable primitives.

Every op takes Tensors (plus plain-array constants such as masks and
labels), computes the forward value eagerly, and registers a closure with
the local backward rule on the active tape.  Matrix products accumulate in
float64 before rounding back to float32 so that results agree exactly with
naive loop oracles; everything else is straight float32.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, EmptyInputError
from .tensor import Tensor, record

F32 = np.float32

_CLAMP_LO = 1e-7
_CLAMP_HI = 1.0 - 1e-7


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.asarray(g, dtype=F32)


def scalar(value: float) -> Tensor:
    """A constant scalar tensor (no gradient path)."""
    return Tensor(np.float32(value))


def conv1d_temporal(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Same-length temporal convolution: (T, D) x (K, D, H) + (H,) -> (T, H).

    Symmetric zero padding of (K-1)/2 frames keeps the output frame-aligned
    with the input, so frame labels apply to both.
    """
    if kernel.data.ndim != 3:
        raise DimensionError(f"conv kernel must be (K, D, H), got {kernel.data.shape}")
    k_width, depth, channels = kernel.data.shape
    if k_width % 2 == 0:
        raise DimensionError(f"conv kernel width must be odd, got {k_width}")
    if x.data.ndim != 2 or x.data.shape[1] != depth:
        raise DimensionError(f"conv input {x.data.shape} does not match kernel depth {depth}")
    if bias.data.shape != (channels,):
        raise DimensionError(f"conv bias {bias.data.shape} does not match {channels} channels")
    n_frames = x.data.shape[0]
    pad = (k_width - 1) // 2
    padded = np.zeros((n_frames + 2 * pad, depth), dtype=np.float64)
    padded[pad:pad + n_frames] = x.data
    kernel64 = kernel.data.astype(np.float64)
    acc = np.tile(bias.data.astype(np.float64), (n_frames, 1))
    for k in range(k_width):
        acc += padded[k:k + n_frames] @ kernel64[k]
    out = Tensor(acc.astype(F32))

    padded32 = padded.astype(F32)

    def backward(g: np.ndarray):
        gx = np.zeros((n_frames + 2 * pad, depth), dtype=F32)
        gk = np.empty_like(kernel.data)
        for k in range(k_width):
            gx[k:k + n_frames] += g @ kernel.data[k].T
            gk[k] = padded32[k:k + n_frames].T @ g
        return gx[pad:pad + n_frames], gk, g.sum(axis=0)

    return record("conv1d", (x, kernel, bias), out, backward)


def fully_connected(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map over the trailing axis: (..., Din) @ (Din, Dout) + (Dout,)."""
    if weights.data.ndim != 2:
        raise DimensionError(f"weights must be 2-D, got {weights.data.shape}")
    din, dout = weights.data.shape
    if x.data.ndim < 1 or x.data.shape[-1] != din:
        raise DimensionError(f"input {x.data.shape} does not match weights {weights.data.shape}")
    if bias.data.shape != (dout,):
        raise DimensionError(f"bias {bias.data.shape} does not match output width {dout}")
    y = x.data.astype(np.float64) @ weights.data.astype(np.float64) + bias.data.astype(np.float64)
    out = Tensor(y.astype(F32))

    def backward(g: np.ndarray):
        gflat = g.reshape(-1, dout)
        xflat = x.data.reshape(-1, din)
        return (g @ weights.data.T).reshape(x.data.shape), xflat.T @ gflat, gflat.sum(axis=0)

    return record("fc", (x, weights, bias), out, backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    y[~pos] = e / (1.0 + e)
    out = Tensor(y)

    def backward(g: np.ndarray):
        return (g * y * (1.0 - y),)

    return record("sigmoid", (x,), out, backward)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    keep = x.data > 0  # subgradient 0 at exactly 0

    def backward(g: np.ndarray):
        return (g * keep,)

    return record("relu", (x,), out, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return record("add", (a, b), out, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def backward(g: np.ndarray):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return record("mul", (a, b), out, backward)


def smul(x: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (no gradient for the constant)."""
    c32 = F32(c)
    out = Tensor(x.data * c32)

    def backward(g: np.ndarray):
        return (g * c32,)

    return record("smul", (x,), out, backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def backward(g: np.ndarray):
        return (g.reshape(x.data.shape),)

    return record("reshape", (x,), out, backward)


def select_column(x: Tensor, col: int) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"select_column needs a 2-D tensor, got {x.data.shape}")
    out = Tensor(x.data[:, col].copy())

    def backward(g: np.ndarray):
        gx = np.zeros_like(x.data)
        gx[:, col] = g
        return (gx,)

    return record("select_column", (x,), out, backward)


def stack_scalars(parts: list[Tensor]) -> Tensor:
    out = Tensor(np.array([p.data.reshape(()) for p in parts], dtype=F32))

    def backward(g: np.ndarray):
        return tuple(np.asarray(g[i], dtype=F32) for i in range(len(parts)))

    return record("stack_scalars", tuple(parts), out, backward)


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(dtype=F32))

    def backward(g: np.ndarray):
        return (np.full_like(x.data, 1) * g,)

    return record("sum_all", (x,), out, backward)


def threshold(x: Tensor, eps: float) -> Tensor:
    """Zero every entry below `eps`; survivors keep value and gradient."""
    keep = x.data >= F32(eps)
    out = Tensor(np.where(keep, x.data, F32(0)))

    def backward(g: np.ndarray):
        return (g * keep,)

    return record("threshold", (x,), out, backward)


def topk_mean(scores: Tensor, mask, k: int) -> Tensor:
    """Mean of the k largest valid entries of a vector.

    Ties break toward the lower frame index; if fewer than k entries are
    valid, all valid entries are averaged.  Masked entries can never be
    selected and receive zero gradient.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    m = np.asarray(mask)
    if scores.data.ndim != 1 or m.shape != scores.data.shape:
        raise DimensionError(f"scores {scores.data.shape} and mask {m.shape} must be equal-length vectors")
    valid = np.flatnonzero(m)
    if valid.size == 0:
        raise EmptyInputError("topk_mean: no valid entries")
    k_eff = min(int(k), valid.size)
    vals = scores.data[valid]
    order = np.lexsort((valid, -vals))  # by value desc, then index asc
    chosen = valid[order[:k_eff]]
    out = Tensor(scores.data[chosen].mean())

    def backward(g: np.ndarray):
        gx = np.zeros_like(scores.data)
        gx[chosen] = g / F32(k_eff)
        return (gx,)

    return record("topk_mean", (scores,), out, backward)


def bce_mean(probs: Tensor, labels, mask) -> Tensor:
    """Mean binary cross entropy over mask-selected entries.

    Probabilities are clamped to [1e-7, 1-1e-7]; entries at or beyond the
    clamp bounds get zero gradient, so a thresholded-to-zero score under a
    positive label contributes the (large) clamped loss but no gradient.
    An empty mask yields a constant 0.
    """
    y = np.asarray(labels, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if y.shape != probs.data.shape or m.shape != probs.data.shape:
        raise DimensionError(
            f"probs {probs.data.shape}, labels {y.shape} and mask {m.shape} must share a shape"
        )
    count = int(m.sum())
    if count == 0:
        return scalar(0.0)
    p = np.clip(probs.data.astype(np.float64), _CLAMP_LO, _CLAMP_HI)
    ce = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    out = Tensor(np.float32(ce[m].sum() / count))

    live = m & (probs.data > F32(_CLAMP_LO)) & (probs.data < F32(_CLAMP_HI))

    def backward(g: np.ndarray):
        gp = np.zeros_like(probs.data)
        pl = p[live]
        gsced = float(np.asarray(g).reshape(()))
        gp[live] = (((pl - y[live]) / (pl * (1.0 - pl)) / count) * gsced).astype(F32)
        return (gp,)

    return record("bce_mean", (probs,), out, backward)


def masked_abs_mean(x: Tensor, mask) -> Tensor:
    """Mean absolute value over valid entries (L1 mass, count-normalized)."""
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.data.shape:
        raise DimensionError(f"mask {m.shape} must match {x.data.shape}")
    count = int(m.sum())
    if count == 0:
        return scalar(0.0)
    out = Tensor(np.float32(np.abs(x.data[m]).astype(np.float64).sum() / count))

    def backward(g: np.ndarray):
        gx = np.sign(x.data) * m / F32(count) * g
        return (gx.astype(F32),)

    return record("masked_abs_mean", (x,), out, backward)


def total_variation(x: Tensor, mask) -> Tensor:
    """Mean |x[t+1] - x[t]| over consecutive valid pairs (0 when < 2 valid)."""
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.data.shape or x.data.ndim != 1:
        raise DimensionError(f"total_variation needs matching vectors, got {x.data.shape} / {m.shape}")
    pairs = m[1:] & m[:-1]
    n_pairs = int(pairs.sum())
    if n_pairs == 0:
        return scalar(0.0)
    diffs = x.data[1:] - x.data[:-1]
    out = Tensor(np.float32(np.abs(diffs[pairs]).astype(np.float64).sum() / n_pairs))

    signs = np.sign(diffs) * pairs / F32(n_pairs)

    def backward(g: np.ndarray):
        gx = np.zeros_like(x.data)
        gx[1:] += signs * g
        gx[:-1] -= signs * g
        return (gx,)

    return record("total_variation", (x,), out, backward)
