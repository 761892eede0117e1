"""Pure-numpy implementations of the hot array kernels.

These are the fallback backend; `mixsep.kernels` re-exports either these or
the compiled equivalents. Both backends implement the same contracts:

- `frame`: slice a batch of signals into hopped windows.
- `overlap_add`: the adjoint of `frame` (scatter-add windows back).
- `depthwise_*`: dilated per-channel 1-D convolution with centered
  zero padding, plus its two gradients.

Shapes are (batch, time) for signals, (batch, frames, length) for framed
blocks, and (batch, frames, channels) for activations. The kernel weight of
the depthwise convolution is (taps, channels).
"""

import numpy as np


def frame(x, length, hop):
    """Cut (B, T) signals into (B, F, length) windows hopped by `hop`.

    F = 1 + (T - length) // hop; trailing samples that do not fill a
    window are dropped (callers pad beforehand).
    """
    B, T = x.shape
    if T < length:
        raise ValueError(f"signal length {T} shorter than window {length}")
    F = 1 + (T - length) // hop
    sb, st = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(B, F, length), strides=(sb, hop * st, st), writeable=False
    )
    return np.ascontiguousarray(view)


def overlap_add(frames, hop, out_len):
    """Scatter-add (B, F, L) windows at stride `hop` into (B, out_len).

    Requires L % hop == 0 so windows split into L//hop interleaved groups
    of non-overlapping frames; each group is placed with one vectorized add.
    """
    B, F, L = frames.shape
    if L % hop != 0:
        raise ValueError(f"window {L} not a multiple of hop {hop}")
    if out_len < (F - 1) * hop + L:
        raise ValueError("output buffer shorter than the overlap-add span")
    out = np.zeros((B, out_len), dtype=frames.dtype)
    groups = L // hop
    for g in range(groups):
        seg = frames[:, g::groups]
        Fg = seg.shape[1]
        if Fg == 0:
            continue
        start = g * hop
        out[:, start : start + Fg * L] += seg.reshape(B, Fg * L)
    return out


def _tap_ranges(F, offset):
    # valid output rows f such that f + offset lies in [0, F)
    lo = max(0, -offset)
    hi = min(F, F - offset)
    return lo, hi


def depthwise_forward(x, w, dilation):
    """Per-channel dilated convolution of (B, F, C) with taps (k, C).

    Centered ("same") zero padding: out[b,f,c] = sum_j x[b, f+(j-c0)*d, c] * w[j,c]
    with c0 = (k-1)//2 and out-of-range samples treated as zero.
    """
    B, F, C = x.shape
    k = w.shape[0]
    c0 = (k - 1) // 2
    out = np.zeros_like(x)
    for j in range(k):
        off = (j - c0) * dilation
        lo, hi = _tap_ranges(F, off)
        if lo < hi:
            out[:, lo:hi, :] += x[:, lo + off : hi + off, :] * w[j]
    return out


def depthwise_grad_input(dy, w, dilation):
    """Gradient of depthwise_forward w.r.t. its input (same shape as dy)."""
    B, F, C = dy.shape
    k = w.shape[0]
    c0 = (k - 1) // 2
    dx = np.zeros_like(dy)
    for j in range(k):
        off = -(j - c0) * dilation
        lo, hi = _tap_ranges(F, off)
        if lo < hi:
            dx[:, lo:hi, :] += dy[:, lo + off : hi + off, :] * w[j]
    return dx


def depthwise_grad_weight(dy, x, dilation, k):
    """Gradient of depthwise_forward w.r.t. its (k, C) taps."""
    B, F, C = x.shape
    c0 = (k - 1) // 2
    dw = np.zeros((k, C), dtype=x.dtype)
    for j in range(k):
        off = (j - c0) * dilation
        lo, hi = _tap_ranges(F, off)
        if lo < hi:
            dw[j] = np.einsum(
                "bfc,bfc->c", dy[:, lo:hi, :], x[:, lo + off : hi + off, :]
            )
    return dw
