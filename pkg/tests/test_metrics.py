import math

import numpy as np
import pytest

from core.image_io import Image
from core.metrics import (
    SSIM_C1, SSIM_C2, YImage, format_value, gaussian_window, mean_row, psnr, read_metrics_csv, rgb_to_y,
    ssim, write_metrics_csv,
)
from core.resample import bicubic_resize, bicubic_resize_array, bicubic_weights, downscale, keys_kernel
from utils.errors import UsageError


def y_plane(values):
    values = np.asarray(values, dtype=np.float64)
    return YImage(values.shape[1], values.shape[0], values)


def ssim_loop(x, y):
    win = gaussian_window()
    k = win.shape[0]
    scores = []
    for i in range(x.shape[0] - k + 1):
        for j in range(x.shape[1] - k + 1):
            px, py = x[i:i + k, j:j + k], y[i:i + k, j:j + k]
            mx, my = np.sum(win * px), np.sum(win * py)
            vx = np.sum(win * (px - mx) ** 2)
            vy = np.sum(win * (py - my) ** 2)
            cxy = np.sum(win * (px - mx) * (py - my))
            scores.append(((2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2))
                          / ((mx ** 2 + my ** 2 + SSIM_C1) * (vx + vy + SSIM_C2)))
    return float(np.mean(scores))


# ------------------------------------------------------------------ resampling

def test_keys_kernel_values():
    np.testing.assert_allclose(keys_kernel([0.0, 1.0, -1.0, 2.0, -2.0, 2.5]), [1, 0, 0, 0, 0, 0], atol=1e-15)
    assert keys_kernel(0.5) == pytest.approx(0.5625)


@pytest.mark.parametrize("n_in,n_out", [(8, 8), (10, 5), (5, 10), (7, 3), (3, 13), (1, 4)])
def test_weights_partition_of_unity(n_in, n_out):
    np.testing.assert_allclose(bicubic_weights(n_in, n_out).sum(axis=1), 1.0, atol=1e-9)


def test_same_size_resize_is_identity(natural_image):
    out = bicubic_resize(natural_image, natural_image.width, natural_image.height)
    np.testing.assert_array_equal(out.pixels, natural_image.pixels)


def test_downscaled_ramp_stays_linear():
    xs = np.arange(64)
    ramp = np.broadcast_to((3 * xs)[None, :, None], (16, 64, 3)).astype(np.uint8)
    small = downscale(Image.from_array(ramp), 2)
    assert (small.width, small.height) == (32, 8)
    row = small.pixels[4, :, 0].astype(np.float64)
    expected = 3 * (2 * np.arange(32) + 0.5)
    # interior columns; the outer two see clamped taps
    np.testing.assert_allclose(row[2:-2], expected[2:-2], atol=1.0)


def test_resize_array_shapes():
    x = np.random.default_rng(0).random((2, 3, 9, 7))
    assert bicubic_resize_array(x, 4, 11).shape == (2, 3, 4, 11)


def test_resize_rejects_empty():
    with pytest.raises(UsageError):
        bicubic_weights(4, 0)


# ------------------------------------------------------------------ luma

def test_luma_of_black_white_gray():
    pixels = np.array([[[0, 0, 0], [255, 255, 255], [128, 128, 128]]], dtype=np.uint8)
    y = rgb_to_y(Image.from_array(pixels)).data[0]
    assert y[0] == 16.0
    assert y[1] == pytest.approx(235.0, abs=1e-3)
    assert y[2] == pytest.approx(16 + (65.481 + 128.553 + 24.966) * 128 / 255)


def test_luma_stays_in_range(natural_image):
    y = rgb_to_y(natural_image).data
    assert y.min() >= 16.0 and y.max() <= 235.0 + 1e-9


# ------------------------------------------------------------------ PSNR

def test_psnr_identical_is_inf():
    a = y_plane(np.random.default_rng(0).random((8, 8)) * 255)
    assert psnr(a, a) == math.inf


@pytest.mark.parametrize("delta,expected", [(1.0, 48.1308), (16.0, 24.0485)])
def test_psnr_uniform_difference(delta, expected):
    a = y_plane(np.full((10, 12), 100.0))
    b = y_plane(np.full((10, 12), 100.0 + delta))
    assert psnr(a, b) == pytest.approx(expected, abs=1e-4)


def test_psnr_symmetric_and_shaved():
    rng = np.random.default_rng(1)
    a = y_plane(rng.random((20, 20)) * 255)
    b = y_plane(rng.random((20, 20)) * 255)
    assert psnr(a, b, 4) == psnr(b, a, 4)
    border_only = a.data.copy()
    border_only[:2, :] += 50
    assert psnr(a, y_plane(border_only), shave=2) == math.inf


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(2)
    base = rng.random((16, 16)) * 200 + 20
    signs = np.where(rng.random((16, 16)) < 0.5, -1.0, 1.0)
    values = [psnr(y_plane(base), y_plane(base + amp * signs)) for amp in (2.0, 4.0, 8.0)]
    assert values[0] > values[1] > values[2]


def test_psnr_size_mismatch():
    with pytest.raises(UsageError, match="sizes differ"):
        psnr(y_plane(np.zeros((4, 4))), y_plane(np.zeros((4, 5))))


# ------------------------------------------------------------------ SSIM

def test_ssim_identical_is_one():
    a = y_plane(np.random.default_rng(3).random((24, 30)) * 255)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ssim_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.random((32, 32)) * 255
    y = np.clip(x + rng.normal(0, 20, x.shape), 0, 255)
    assert ssim(y_plane(x), y_plane(y)) == pytest.approx(ssim_loop(x, y), abs=1e-8)
    assert ssim(y_plane(x), y_plane(y)) == pytest.approx(ssim(y_plane(y), y_plane(x)), abs=1e-12)


def test_ssim_of_negative(natural_image):
    y = rgb_to_y(natural_image).data[:40, :40]
    value = ssim(y_plane(y), y_plane(255 - y), shave=2)
    assert -1.0 <= value < 1.0
    assert value == pytest.approx(ssim_loop(y[2:-2, 2:-2], 255 - y[2:-2, 2:-2]), abs=1e-8)


def test_ssim_too_small_after_shave():
    a = y_plane(np.zeros((20, 20)))
    with pytest.raises(UsageError, match="11x11"):
        ssim(a, a, shave=5)


# ------------------------------------------------------------------ report rows

def test_metrics_csv_round_trip(tmp_path):
    rows = [("a.png", 30.5, 0.9), ("b.png", math.inf, 1.0)]
    rows.append(mean_row("mean", rows))
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "image,psnr_db,ssim"
    assert lines[2] == "b.png,inf,1.000000"
    loaded = read_metrics_csv(path)
    assert [r[0] for r in loaded] == ["a.png", "b.png", "mean"]
    assert loaded[2][1] == math.inf


def test_format_value():
    assert format_value(1 / 3) == "0.333333"
    assert format_value(-math.inf) == "-inf"
    with pytest.raises(UsageError):
        mean_row("mean", [])
