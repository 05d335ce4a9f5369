"""
Image quality metrics
Y-channel PSNR/SSIM with a border shave, and the CSV report
"""
import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
from scipy.signal import correlate2d

from core.image_io import Image
from utils.errors import UsageError

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2
CSV_HEADER = ("image", "psnr_db", "ssim")

MetricRow = Tuple[str, float, float]


@dataclass
class YImage:
    """Luminance plane, floats in [0, 255]"""

    width: int
    height: int
    data: np.ndarray

    def shave(self, border: int) -> np.ndarray:
        if border <= 0:
            return self.data
        return self.data[border:-border, border:-border]


def rgb_to_y(img: Image) -> YImage:
    """ITU-R BT.601 luma on the [16, 235] range"""
    rgb = img.pixels.astype(np.float64)
    y = 16.0 + (65.481 * rgb[..., 0] + 128.553 * rgb[..., 1] + 24.966 * rgb[..., 2]) / 255.0
    return YImage(img.width, img.height, y)


def _check_pair(a: YImage, b: YImage, op: str):
    if (a.width, a.height) != (b.width, b.height):
        raise UsageError(f"{op}: image sizes differ ({a.width}x{a.height} vs {b.width}x{b.height})")


def psnr(a: YImage, b: YImage, shave: int = 0) -> float:
    """10 log10(255^2 / MSE); identical planes give +inf"""
    _check_pair(a, b, "psnr")
    if shave < 0:
        raise UsageError(f"psnr: shave must be >= 0, got {shave}")
    diff = a.shave(shave) - b.shave(shave)
    if diff.size == 0:
        raise UsageError(f"psnr: shave {shave} leaves no pixels of a {a.width}x{a.height} image")
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: YImage, b: YImage, shave: int = 0) -> float:
    """Single-scale SSIM averaged over every valid 11x11 window position"""
    _check_pair(a, b, "ssim")
    x, y = a.shave(shave), b.shave(shave)
    if min(x.shape) < SSIM_WINDOW:
        raise UsageError(
            f"ssim: needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels after shaving {shave}, got {x.shape[1]}x{x.shape[0]}"
        )
    win = gaussian_window()

    def filt(z: np.ndarray) -> np.ndarray:
        return correlate2d(z, win, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(y * y) - mu_y * mu_y
    sxy = filt(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * sxy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float(np.mean(num / den))


def format_value(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.6f}"


def mean_row(label: str, rows: Sequence[MetricRow]) -> MetricRow:
    if not rows:
        raise UsageError(f"Cannot average an empty set of rows for {label!r}")
    return (label, float(np.mean([r[1] for r in rows])), float(np.mean([r[2] for r in rows])))


def write_metrics_csv(path: Union[str, Path], rows: Iterable[MetricRow]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for name, p, s in rows:
            writer.writerow((name, format_value(p), format_value(s)))
    logger.info(f"💾 Metrics written: {path}")


def read_metrics_csv(path: Union[str, Path]) -> List[MetricRow]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise UsageError(f"{path}: unexpected metrics header {header}")
        return [(name, float(p), float(s)) for name, p, s in reader]
