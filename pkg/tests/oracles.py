"""Independent reference implementations used as test oracles.

Everything here is written without the package's tape machinery: plain
loops and float64 numpy.  The float64 forward/loss replica backs the
finite-difference gradient checks; dividing by the actually realized
float32 parameter step keeps quantization out of the comparison.
"""

from __future__ import annotations

import numpy as np

from c2f.labeling import FrameSupervision, derive_supervision, FirstOccurrence
from c2f.trainer import BatchItem


def conv1d_loop(x, kernel, bias):
    """Nested-loop same-padding temporal convolution, float64 then float32."""
    t, d = x.shape
    k_width, _, h = kernel.shape
    pad = (k_width - 1) // 2
    out = np.zeros((t, h), dtype=np.float64)
    for i in range(t):
        for j in range(h):
            acc = float(bias[j])
            for k in range(k_width):
                src = i + k - pad
                if 0 <= src < t:
                    for dd in range(d):
                        acc += float(x[src, dd]) * float(kernel[k, dd, j])
            out[i, j] = acc
    return out.astype(np.float32)


def fc_loop(x, weights, bias):
    """Hand multiply-accumulate affine map, float64 then float32."""
    xf = x.reshape(-1, x.shape[-1])
    out = np.zeros((xf.shape[0], weights.shape[1]), dtype=np.float64)
    for i in range(xf.shape[0]):
        for j in range(weights.shape[1]):
            acc = float(bias[j])
            for k in range(weights.shape[0]):
                acc += float(xf[i, k]) * float(weights[k, j])
            out[i, j] = acc
    return out.astype(np.float32).reshape(x.shape[:-1] + (weights.shape[1],))


def topk_mean_sort(scores, mask, k):
    """Sort-then-average top-k of the valid entries."""
    vals = scores[np.asarray(mask) > 0]
    top = np.sort(vals)[::-1][: min(k, vals.size)]
    return top.mean()


def bce_loop(probs, labels, mask):
    """Per-element BCE summed by hand in float64."""
    m = np.asarray(mask, dtype=bool).reshape(-1)
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    total = 0.0
    count = 0
    for i in range(p.size):
        if not m[i]:
            continue
        pi = min(max(p[i], 1e-7), 1.0 - 1e-7)
        total += -(y[i] * np.log(pi) + (1.0 - y[i]) * np.log1p(-pi))
        count += 1
    return total / count if count else 0.0


# ---------------------------------------------------------------------------
# float64 replica of the model forward pass and composite loss


def sigmoid64(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))


def forward64(param_arrays, cfg, mode, features, mask):
    t = features.shape[0]
    h = features * mask[:, None]
    k_width = cfg.kernel_width
    pad = (k_width - 1) // 2
    xp = np.zeros((t + 2 * pad, features.shape[1]))
    xp[pad:pad + t] = h
    conv = np.tile(param_arrays["conv_b"].astype(np.float64), (t, 1))
    for k in range(k_width):
        conv += xp[k:k + t] @ param_arrays["conv_w"][k].astype(np.float64)
    h = np.maximum(conv, 0)
    h = np.maximum(h @ param_arrays["fc1_w"] + param_arrays["fc1_b"], 0)
    h = np.maximum(h @ param_arrays["fc2_w"] + param_arrays["fc2_b"], 0)
    if mode == "FO+VL+PD":
        f = sigmoid64(h @ param_arrays["fg_w"] + param_arrays["fg_b"]).reshape(t) * mask
        f_th = np.where(f >= cfg.fg_threshold, f, 0.0)
        cs = sigmoid64(h @ param_arrays["act_w"] + param_arrays["act_b"]) * mask[:, None]
        action = f[:, None] * cs
    else:
        f = f_th = cs = None
        action = sigmoid64(h @ param_arrays["act_w"] + param_arrays["act_b"]) * mask[:, None]
    valid = int(mask.sum())
    k = max(1, int(cfg.topk_ratio * valid))
    video = np.array([
        np.sort(action[:, c][mask > 0])[::-1][:k].mean() for c in range(action.shape[1])
    ])
    return f, f_th, cs, action, video


def bce64(p, labels, mask):
    m = np.asarray(mask, bool)
    if m.sum() == 0:
        return 0.0
    pc = np.clip(p, 1e-7, 1.0 - 1e-7)
    return (-(labels * np.log(pc) + (1.0 - labels) * np.log1p(-pc)))[m].sum() / m.sum()


def composite_loss64(param_arrays, cfg, mode, items, weights):
    total = 0.0
    for item in items:
        f, f_th, cs, action, video = forward64(
            param_arrays, cfg, mode, item.features.astype(np.float64), item.mask.astype(np.float64)
        )
        sup = item.supervision
        if mode == "FO+VL+PD":
            l_ce = bce64(f_th, sup.fg_labels.astype(np.float64), sup.fg_label_mask)
            vm = item.mask.astype(bool)
            l_bg = (np.abs(f[vm]).sum() / vm.sum()) if sup.is_bg_only else 0.0
            pairs = vm[1:] & vm[:-1]
            l_lap = np.abs((f[1:] - f[:-1])[pairs]).sum() / pairs.sum() if pairs.sum() else 0.0
            fg2 = np.broadcast_to(sup.fg_frame_mask.astype(bool)[:, None], cs.shape)
            l_cs = bce64(cs, sup.cond_labels.astype(np.float64), fg2)
            l_vid = bce64(video, item.video_labels.astype(np.float64), np.ones_like(video, bool))
        else:
            neg = sup.fg_label_mask.astype(bool) & ~sup.fg_frame_mask.astype(bool)
            l_ce = bce64(action, np.zeros_like(action), np.broadcast_to(neg[:, None], action.shape))
            fg2 = np.broadcast_to(sup.fg_frame_mask.astype(bool)[:, None], action.shape)
            l_cs = bce64(action, sup.cond_labels.astype(np.float64), fg2)
            l_bg = l_lap = 0.0
            l_vid = (
                bce64(video, item.video_labels.astype(np.float64), np.ones_like(video, bool))
                if mode == "FO+VL" else 0.0
            )
        l_fg = l_ce + weights.bg_only_weight * l_bg + weights.smoothness_weight * l_lap
        total += l_vid + weights.foreground_weight * l_fg + weights.conditional_weight * l_cs
    return total / len(items)


def gradcheck_items(seed, t=16, d=4, c=2):
    """Two-video instance: one labeled with overlapping occurrences plus
    tail padding, one background-only."""
    rng = np.random.default_rng(seed)
    items = []
    x = rng.standard_normal((t, d)).astype(np.float32)
    m = np.ones(t, dtype=np.float32)
    m[13:] = 0.0
    sup = derive_supervision(
        [FirstOccurrence(0, 4, 9), FirstOccurrence(1, 6, 10)], 13, c, 0.3, seed + 1
    )

    def pad1(a):
        out = np.zeros(t, dtype=np.float32)
        out[: a.shape[0]] = a
        return out

    cond = np.zeros((t, c), dtype=np.float32)
    cond[: sup.cond_labels.shape[0]] = sup.cond_labels
    sup = FrameSupervision(
        pad1(sup.fg_labels), pad1(sup.fg_label_mask), cond, pad1(sup.fg_frame_mask), sup.is_bg_only
    )
    items.append(BatchItem("a", x, m, np.array([1, 1], dtype=np.float32), sup))
    x2 = rng.standard_normal((t, d)).astype(np.float32)
    items.append(BatchItem(
        "b", x2, np.ones(t, dtype=np.float32), np.zeros(c, dtype=np.float32),
        derive_supervision([], t, c, 0.3, seed + 2),
    ))
    return items


def fd_gradient(fn, param_array, index, h=1e-5):
    """Central difference of `fn` w.r.t. one float32 entry, dividing by the
    realized (quantized) step."""
    flat = param_array.reshape(-1)
    orig = flat[index]
    hi = np.float32(orig + np.float32(h))
    lo = np.float32(orig - np.float32(h))
    flat[index] = hi
    f_hi = fn()
    flat[index] = lo
    f_lo = fn()
    flat[index] = orig
    return (f_hi - f_lo) / (float(hi) - float(lo))


def grad_close(analytic, fd, rtol=1e-3, atol=1e-5):
    return abs(analytic - fd) <= max(atol, rtol * max(abs(analytic), abs(fd)))
