"""Pytest configuration and fixtures."""

import numpy as np
import pytest
from scipy import ndimage

from vhs2hd import metrics
from vhs2hd.config import build_config
from vhs2hd.utils.imageio import write_rgb8

# Overrides that shrink every network so a training cycle runs in well under a second.
TINY_OVERRIDES = [
    "model.generator.depth=2",
    "model.generator.base_channels=8",
    "model.generator.max_channels=16",
    "model.discriminator.widths=[8]",
    "model.features.tap_stage=identity",
    "train.crop=16",
    "train.batch_size=2",
    "train.total_cycle_steps=2",
    "train.res_steps_per_cycle_step=1",
    "train.checkpoint_every=1",
]


def textured_rgb(height: int, width: int, seed: int = 0) -> np.ndarray:
    """Deterministic natural-looking test image: smoothed noise plus oriented stripes."""
    rng = np.random.default_rng(seed)
    base = ndimage.gaussian_filter(rng.normal(size=(height, width, 3)), sigma=(2.0, 2.0, 0.0))
    base = (base - base.min()) / (base.max() - base.min())
    yy, xx = np.mgrid[0:height, 0:width]
    stripes = 0.5 + 0.5 * np.sin(xx / 3.0 + yy / 7.0 + seed)
    img = 0.6 * base + 0.4 * stripes[..., None]
    return np.clip(img * 255.0, 0, 255).round().astype(np.uint8)


def natural_gray(height: int, width: int, seed: int = 0) -> np.ndarray:
    """
    Low-contrast luminance with smooth, isotropic structure: locally normalized
    coefficients come out near-Gaussian, like those of an undistorted photograph.
    """
    rng = np.random.default_rng(seed)
    field = ndimage.gaussian_filter(rng.normal(size=(height, width)), sigma=1.5)
    return 128.0 + 10.0 * (field - field.mean()) / field.std()


def write_images(directory, count: int, height: int, width: int, seed: int = 0, prefix: str = "frame"):
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        path = directory / ("%s_%03d.png" % (prefix, i))
        write_rgb8(path, textured_rgb(height, width, seed + i))
        paths.append(path)
    return paths


@pytest.fixture(autouse=True)
def fresh_metrics():
    """Every test starts with zeroed counters."""
    metrics.reset()
    yield
    metrics.reset()


@pytest.fixture
def tiny_config():
    return build_config(preset="desk", overrides=TINY_OVERRIDES)


@pytest.fixture
def image_dirs(tmp_path):
    """Unpaired domains: 6 X frames (40×40) and 6 Y frames (48×48)."""
    x_dir = tmp_path / "data" / "X"
    y_dir = tmp_path / "data" / "Y"
    write_images(x_dir, 6, 40, 40, seed=100, prefix="vhs")
    write_images(y_dir, 6, 48, 48, seed=200, prefix="hdtv")
    return x_dir, y_dir
