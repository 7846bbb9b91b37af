"""8-bit RGB image file utilities."""

from pathlib import Path
from typing import List, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from vhs2hd.errors import FrameDecodeError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def is_image(path: Union[str, Path]) -> bool:
    return Path(path).suffix.lower() in IMAGE_SUFFIXES


def list_images(directory: Union[str, Path]) -> List[Path]:
    """Image files directly inside directory, sorted by file name."""
    directory = Path(directory)
    return sorted((p for p in directory.iterdir() if p.is_file() and is_image(p)), key=lambda p: p.name)


def read_rgb8(path: Union[str, Path]) -> np.ndarray:
    """
    Read an image file as an H×W×3 uint8 array.

    Raises:
        FrameDecodeError: file missing, unreadable or not an image
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError) as e:
        raise FrameDecodeError("Cannot read image %s: %s" % (path, e)) from e


def write_rgb8(path: Union[str, Path], pixels: np.ndarray) -> None:
    """
    Write an H×W×3 uint8 array. Format follows the suffix; PNG output is lossless
    and byte-stable for identical pixels.
    """
    path = Path(path)
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError("Expected H×W×3 uint8 pixels, got %s %s" % (pixels.dtype, pixels.shape))
    path.parent.mkdir(parents=True, exist_ok=True)
    img = Image.fromarray(pixels, mode="RGB")
    if path.suffix.lower() == ".png":
        img.save(path, format="PNG", compress_level=6)
    else:
        img.save(path)
