"""
Attention primitives: batched matmul, softmax, channel layer norm,
window partition/reverse, cyclic shift and head split/merge.

Windowed tokens use the layout [N * num_windows, 1, w * w, C];
split_heads turns it into [N * num_windows, heads, w * w, C / heads].
"""
import numpy as np

from core.tensor import Tensor, make_result, unbroadcast, _require_rank4
from utils.errors import DimensionError

SHIFT_MASK_VALUE = -100.0


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """Batched matmul over the last two axes, leading axes broadcast"""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    bd = np.swapaxes(b.data, -1, -2) if transpose_b else b.data
    if a.shape[-1] != bd.shape[-2]:
        raise DimensionError(
            f"matmul: inner axis mismatch {a.shape[-1]} != {bd.shape[-2]} ({a.shape} @ {b.shape})"
        )
    try:
        out = np.matmul(a.data, bd)
    except ValueError as exc:
        raise DimensionError(f"matmul: batch axes do not broadcast ({a.shape}, {b.shape})") from exc

    def backward_fn(g):
        ga = unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), a.shape)
        gbd = np.matmul(np.swapaxes(a.data, -1, -2), g)
        if transpose_b:
            gbd = np.swapaxes(gbd, -1, -2)
        return ga, unbroadcast(gbd, b.shape)

    return make_result(out, "matmul", (a, b), backward_fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return make_result(y, "softmax", (x,), backward_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the channel axis at every spatial position"""
    _require_rank4(x, "layer_norm")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm affine params must have shape ({c},)")
    mean = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mean
    var = np.mean(centered * centered, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    g4 = gamma.data.reshape(1, c, 1, 1)
    out = xhat * g4 + beta.data.reshape(1, c, 1, 1)

    def backward_fn(g):
        gxhat = g * g4
        gx = inv_std * (
            gxhat
            - gxhat.mean(axis=1, keepdims=True)
            - xhat * np.mean(gxhat * xhat, axis=1, keepdims=True)
        )
        ggamma = np.sum(g * xhat, axis=(0, 2, 3))
        gbeta = np.sum(g, axis=(0, 2, 3))
        return gx.astype(x.dtype, copy=False), ggamma.astype(gamma.dtype), gbeta.astype(beta.dtype)

    return make_result(out.astype(x.dtype, copy=False), "layer_norm", (x, gamma, beta), backward_fn)


def window_partition(x: Tensor, w: int) -> Tensor:
    """[N, C, H, W] -> [N * (H/w) * (W/w), 1, w*w, C]"""
    _require_rank4(x, "window_partition")
    n, c, h, wd = x.shape
    if h % w:
        raise DimensionError(f"window_partition: axis 2 (H) of size {h} not divisible by window {w}")
    if wd % w:
        raise DimensionError(f"window_partition: axis 3 (W) of size {wd} not divisible by window {w}")
    nh, nw = h // w, wd // w
    out = (x.data.reshape(n, c, nh, w, nw, w)
           .transpose(0, 2, 4, 3, 5, 1)
           .reshape(n * nh * nw, 1, w * w, c))

    def backward_fn(g):
        return (g.reshape(n, nh, nw, w, w, c).transpose(0, 5, 1, 3, 2, 4).reshape(x.shape),)

    return make_result(np.ascontiguousarray(out), "window_partition", (x,), backward_fn)


def window_reverse(windows: Tensor, w: int, h: int, wd: int) -> Tensor:
    """[N * (H/w) * (W/w), 1, w*w, C] -> [N, C, H, W]"""
    if windows.ndim != 4 or windows.shape[1] != 1 or windows.shape[2] != w * w:
        raise DimensionError(f"window_reverse: expected [B, 1, {w * w}, C], got {windows.shape}")
    if h % w or wd % w:
        raise DimensionError(f"window_reverse: {h}x{wd} not divisible by window {w}")
    nh, nw = h // w, wd // w
    b, _, _, c = windows.shape
    if b % (nh * nw):
        raise DimensionError(f"window_reverse: axis 0 of size {b} not a multiple of {nh * nw} windows")
    n = b // (nh * nw)
    out = (windows.data.reshape(n, nh, nw, w, w, c)
           .transpose(0, 5, 1, 3, 2, 4)
           .reshape(n, c, h, wd))

    def backward_fn(g):
        return (g.reshape(n, c, nh, w, nw, w).transpose(0, 2, 4, 3, 5, 1).reshape(windows.shape),)

    return make_result(np.ascontiguousarray(out), "window_reverse", (windows,), backward_fn)


def cyclic_shift(x: Tensor, dy: int, dx: int) -> Tensor:
    _require_rank4(x, "cyclic_shift")
    out = np.roll(x.data, shift=(dy, dx), axis=(2, 3))

    def backward_fn(g):
        return (np.roll(g, shift=(-dy, -dx), axis=(2, 3)),)

    return make_result(out, "cyclic_shift", (x,), backward_fn)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[B, 1, T, C] -> [B, heads, T, C / heads]"""
    b, one, t, c = x.shape
    if one != 1 or c % heads:
        raise DimensionError(f"split_heads: cannot split {x.shape} into {heads} heads")
    d = c // heads
    out = x.data.reshape(b, t, heads, d).transpose(0, 2, 1, 3)

    def backward_fn(g):
        return (g.transpose(0, 2, 1, 3).reshape(x.shape),)

    return make_result(np.ascontiguousarray(out), "split_heads", (x,), backward_fn)


def merge_heads(x: Tensor) -> Tensor:
    """[B, heads, T, d] -> [B, 1, T, heads * d]"""
    b, heads, t, d = x.shape
    out = x.data.transpose(0, 2, 1, 3).reshape(b, 1, t, heads * d)

    def backward_fn(g):
        return (g.reshape(b, t, heads, d).transpose(0, 2, 1, 3),)

    return make_result(np.ascontiguousarray(out), "merge_heads", (x,), backward_fn)


def shifted_window_mask(h: int, w: int, window: int, shift: int) -> np.ndarray:
    """Additive mask [num_windows, 1, T, T] blocking attention across pre-shift regions"""
    labels = np.zeros((h, w), dtype=np.int64)
    bounds = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    region = 0
    for hs in bounds:
        for ws in bounds:
            labels[hs, ws] = region
            region += 1
    nh, nw = h // window, w // window
    tiles = labels.reshape(nh, window, nw, window).transpose(0, 2, 1, 3).reshape(nh * nw, window * window)
    same = tiles[:, :, None] == tiles[:, None, :]
    return np.where(same, 0.0, SHIFT_MASK_VALUE)[:, None]
