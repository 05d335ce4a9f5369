"""
Convolution, pooling and spatial rearrangement kernels
im2col through sliding windows + tensordot, col2im by per-tap accumulation
"""
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core.tensor import Tensor, make_result, _require_rank4
from utils.errors import DimensionError, UsageError


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding, weight [Cout, Cin, kh, kw]"""
    _require_rank4(x, "conv2d")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d weight must be Cout,Cin,kh,kw, got {weight.shape}")
    if stride < 1 or padding < 0:
        raise UsageError(f"conv2d needs stride >= 1 and padding >= 0 (got {stride}, {padding})")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv2d: axis 1 (C) mismatch, input has {cin} channels, weight expects {wcin}")
    if kh > h + 2 * padding:
        raise DimensionError(f"conv2d: axis 2 (H) of size {h}+2*{padding} smaller than kernel {kh}")
    if kw > w + 2 * padding:
        raise DimensionError(f"conv2d: axis 3 (W) of size {w}+2*{padding} smaller than kernel {kw}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d bias must have shape ({cout},), got {bias.shape}")

    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data

    if kh == 1 and kw == 1:
        cols = xp[:, :, ::stride, ::stride][:, :, :ho, :wo]
        out = np.tensordot(cols, weight.data[:, :, 0, 0], axes=([1], [1]))  # N,Ho,Wo,Cout
    else:
        cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias.data.reshape(1, cout, 1, 1)
    out = out.astype(x.dtype, copy=False)

    def backward_fn(g):
        if kh == 1 and kw == 1:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
            gcols = np.tensordot(g, weight.data[:, :, 0, 0], axes=([1], [0]))  # N,Ho,Wo,Cin
            gxp = np.zeros_like(xp)
            gxp[:, :, ::stride, ::stride][:, :, :ho, :wo] += gcols.transpose(0, 3, 1, 2)
        else:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
            gcols = np.tensordot(g, weight.data, axes=([1], [0]))  # N,Ho,Wo,Cin,kh,kw
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw.astype(weight.dtype, copy=False), gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, "conv2d", inputs, backward_fn)


def channel_conv1d(desc: Tensor, kernel: Tensor) -> Tensor:
    """1-D convolution across the channel axis of pooled descriptors [N,C,1,1]

    Zero padding keeps the channel count, so there is no dimensionality reduction.
    """
    _require_rank4(desc, "channel_conv1d")
    if kernel.ndim != 1 or kernel.shape[0] % 2 == 0:
        raise DimensionError(f"channel_conv1d kernel must be 1-D with odd length, got {kernel.shape}")
    k = kernel.shape[0]
    pad = k // 2
    n, c = desc.shape[0], desc.shape[1]
    flat = desc.data.reshape(n, c, -1)
    dp = np.pad(flat, ((0, 0), (pad, pad), (0, 0)))
    out = np.zeros_like(flat)
    for j in range(k):
        out += kernel.data[j] * dp[:, j:j + c]
    out = out.reshape(desc.shape)

    def backward_fn(g):
        gf = g.reshape(n, c, -1)
        gk = np.array([np.sum(gf * dp[:, j:j + c]) for j in range(k)], dtype=kernel.dtype)
        gdp = np.zeros_like(dp)
        for j in range(k):
            gdp[:, j:j + c] += kernel.data[j] * gf
        return gdp[:, pad:pad + c].reshape(desc.shape), gk

    return make_result(out, "channel_conv1d", (desc, kernel), backward_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    _require_rank4(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward_fn(g):
        return (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype),)

    return make_result(out, "global_avg_pool", (x,), backward_fn)


def max_pool2d(x: Tensor, kernel: int, stride: int) -> Tensor:
    """Max pooling; on ties the first argmax in row-major order takes the gradient"""
    _require_rank4(x, "max_pool2d")
    n, c, h, w = x.shape
    if kernel > h:
        raise DimensionError(f"max_pool2d: axis 2 (H) of size {h} smaller than kernel {kernel}")
    if kernel > w:
        raise DimensionError(f"max_pool2d: axis 3 (W) of size {w} smaller than kernel {kernel}")
    ho = conv_output_size(h, kernel, stride, 0)
    wo = conv_output_size(w, kernel, stride, 0)
    windows = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = windows.reshape(n, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    rows = np.arange(ho)[:, None] * stride + arg // kernel
    cols = np.arange(wo)[None, :] * stride + arg % kernel
    nn_idx = np.arange(n)[:, None, None, None]
    cc_idx = np.arange(c)[None, :, None, None]

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (nn_idx, cc_idx, rows, cols), g)
        return (gx,)

    return make_result(np.ascontiguousarray(out), "max_pool2d", (x,), backward_fn)


def pool(op: str, x: Tensor, kernel: int = 0, stride: int = 1) -> Tensor:
    if op == "global_avg":
        return global_avg_pool(x)
    if op == "max2d":
        return max_pool2d(x, kernel, stride)
    raise UsageError(f"Unknown pool op: {op}")


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """[N, C*r^2, H, W] -> [N, C, H*r, W*r]"""
    _require_rank4(x, "pixel_shuffle")
    n, crr, h, w = x.shape
    if r < 1 or crr % (r * r):
        raise DimensionError(f"pixel_shuffle: axis 1 (C) of size {crr} not divisible by {r}^2")
    c = crr // (r * r)
    out = x.data.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)

    def backward_fn(g):
        return (g.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(x.shape),)

    return make_result(np.ascontiguousarray(out), "pixel_shuffle", (x,), backward_fn)


def gather_spatial(x: Tensor, rows: np.ndarray, cols: np.ndarray, op: str = "gather") -> Tensor:
    """out[..., i, j] = x[..., rows[i], cols[j]]; gradients scatter-add back"""
    _require_rank4(x, op)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    out = x.data[:, :, rows][:, :, :, cols]
    n, c, h, w = x.shape

    def backward_fn(g):
        tmp = np.zeros((n, c, h, g.shape[3]), dtype=g.dtype)
        np.add.at(tmp, (slice(None), slice(None), rows), g)
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), slice(None), slice(None), cols), tmp)
        return (gx,)

    return make_result(np.ascontiguousarray(out), op, (x,), backward_fn)


def upsample_nearest(x: Tensor, factor: int, out_h: Optional[int] = None,
                     out_w: Optional[int] = None) -> Tensor:
    """Nearest-neighbour upsample by an integer factor, cropped to (out_h, out_w)"""
    _require_rank4(x, "upsample_nearest")
    h, w = x.shape[2], x.shape[3]
    out_h = h * factor if out_h is None else out_h
    out_w = w * factor if out_w is None else out_w
    if out_h > h * factor or out_w > w * factor:
        raise DimensionError(
            f"upsample_nearest: target {out_h}x{out_w} exceeds {h}x{w} times {factor}"
        )
    return gather_spatial(x, np.arange(out_h) // factor, np.arange(out_w) // factor, "upsample_nearest")


def resize_nearest(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Nearest-neighbour resize to an arbitrary size, src = floor(dst * in / out)"""
    _require_rank4(x, "resize_nearest")
    h, w = x.shape[2], x.shape[3]
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return gather_spatial(x, rows, cols, "resize_nearest")


def pad_reflect(x: Tensor, pad_bottom: int, pad_right: int) -> Tensor:
    """Reflect-pad the bottom and right edges; a single-pixel axis repeats its edge"""
    if pad_bottom == 0 and pad_right == 0:
        return x
    _require_rank4(x, "pad_reflect")
    h, w = x.shape[2], x.shape[3]
    rows = np.pad(np.arange(h), (0, pad_bottom), mode="reflect")
    cols = np.pad(np.arange(w), (0, pad_right), mode="reflect")
    return gather_spatial(x, rows, cols, "pad_reflect")


def crop(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left h x w region"""
    _require_rank4(x, "crop")
    if x.shape[2] == h and x.shape[3] == w:
        return x
    if h > x.shape[2] or w > x.shape[3]:
        raise DimensionError(f"crop: {h}x{w} larger than input {x.shape[2]}x{x.shape[3]}")
    return gather_spatial(x, np.arange(h), np.arange(w), "crop")
