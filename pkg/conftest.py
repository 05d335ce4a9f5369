"""Shared pytest fixtures"""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from core.image_io import Image, save_image  # noqa: E402
from models.config import EPNetConfig  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training/acceptance checks")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Smallest config that still runs every block"""
    return EPNetConfig(scale=2, base_channels=8, n_pfem=1, window_size=4, num_heads=4, pyramid_levels=1)


@pytest.fixture
def smoke_config():
    return EPNetConfig(scale=2, base_channels=16, n_pfem=2, window_size=4, num_heads=4, pyramid_levels=2)


def make_natural_image(width: int, height: int, seed: int = 0) -> Image:
    """Smooth colour gradients plus a few soft edges and mild texture"""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    r = 0.5 + 0.35 * np.sin(xx / 7.0) * np.cos(yy / 11.0)
    g = 0.3 + 0.4 * (xx / width) + 0.1 * np.sin((xx + yy) / 5.0)
    b = 0.6 - 0.3 * (yy / height) + 0.15 * (((xx // 12) + (yy // 12)) % 2)
    rgb = np.stack([r, g, b], axis=-1) + rng.normal(0, 0.01, size=(height, width, 3))
    return Image.from_array(np.clip(np.rint(rgb * 255), 0, 255).astype(np.uint8))


def make_textured_image(width: int, height: int) -> Image:
    """Stripes just below the x2 LR Nyquist limit, one orientation per channel"""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    r = 0.5 + 0.3 * np.sin(2 * np.pi * xx / 4.4)
    g = 0.5 + 0.3 * np.sin(2 * np.pi * yy / 4.8)
    b = 0.5 + 0.25 * np.sin(2 * np.pi * (xx + yy) / 5.5)
    rgb = np.stack([r, g, b], axis=-1)
    return Image.from_array(np.clip(np.rint(rgb * 255), 0, 255).astype(np.uint8))


@pytest.fixture
def textured_image():
    return make_textured_image(96, 96)


@pytest.fixture
def image_factory():
    return make_natural_image


@pytest.fixture
def natural_image():
    return make_natural_image(96, 96)


@pytest.fixture
def image_dir(tmp_path, natural_image):
    folder = tmp_path / "hr"
    save_image(folder / "img_000.png", natural_image)
    return folder
