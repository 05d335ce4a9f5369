"""
Bicubic resampling
Separable Keys cubic (a = -0.5), clamped edges, half-pixel centres
"""
import numpy as np

from core.image_io import Image
from utils.errors import UsageError

KEYS_A = -0.5


def keys_kernel(t, a: float = KEYS_A):
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def bicubic_weights(in_size: int, out_size: int) -> np.ndarray:
    """[out_size, in_size] matrix; each row sums to one"""
    if in_size < 1 or out_size < 1:
        raise UsageError(f"Resize sizes must be >= 1, got {in_size} -> {out_size}")
    dst = np.arange(out_size, dtype=np.float64)
    src = (dst + 0.5) * (in_size / out_size) - 0.5
    base = np.floor(src).astype(np.int64)
    weights = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.arange(out_size)
    for offset in range(-1, 3):
        tap = base + offset
        np.add.at(weights, (rows, np.clip(tap, 0, in_size - 1)), keys_kernel(src - tap))
    return weights


def bicubic_resize_array(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize the last two axes of a float array"""
    x = np.asarray(x, dtype=np.float64)
    wy = bicubic_weights(x.shape[-2], out_h)
    wx = bicubic_weights(x.shape[-1], out_w)
    return np.einsum("oh,...hw,pw->...op", wy, x, wx)


def bicubic_resize(img: Image, out_w: int, out_h: int) -> Image:
    resized = bicubic_resize_array(img.pixels.transpose(2, 0, 1).astype(np.float64), out_h, out_w)
    return Image.from_array(np.clip(np.rint(resized), 0, 255).astype(np.uint8).transpose(1, 2, 0))


def downscale(img: Image, scale: int) -> Image:
    """LR counterpart of an HR image whose sides are multiples of ``scale``"""
    return bicubic_resize(img, img.width // scale, img.height // scale)


def upscale(img: Image, scale: int) -> Image:
    return bicubic_resize(img, img.width * scale, img.height * scale)
