"""PNG input/output. Images live in memory as linear RGB floats in [0, 1]."""

from __future__ import annotations

import numpy as np
from PIL import Image


def linear_to_srgb(x):
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def srgb_to_linear(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def write_png(path, image) -> None:
    """Encode a linear ``(H, W, 3)`` image as 8-bit sRGB."""
    img = np.round(linear_to_srgb(image) * 255.0).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(path)


def read_png(path) -> np.ndarray:
    """Decode an 8-bit PNG into linear RGB float64."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return srgb_to_linear(arr)


def quantize(image) -> np.ndarray:
    """The linear image exactly as it reads back after :func:`write_png`."""
    return srgb_to_linear(np.round(linear_to_srgb(image) * 255.0) / 255.0)


def write_float(path, image) -> None:
    np.save(path, np.asarray(image, dtype=np.float32))
