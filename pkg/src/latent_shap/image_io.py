"""Image representation and file formats.

An image is a float64 array of shape (H, W, C), row-major, channel-last,
with finite values in [0, 1]. PNG files (8-bit grayscale or RGB) map to
[0, 1] by /255; CSV grids hold one row per pixel row with channels
interleaved along each row.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ShapeMismatch


def as_image(x, *, check_range: bool = True) -> np.ndarray:
    """Validate and normalize an array to the (H, W, C) float64 contract."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ShapeMismatch(f"expected an (H, W, C) image, got shape {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if check_range and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(
            f"image intensities outside [0, 1]: min={arr.min():.6g} max={arr.max():.6g}"
        )
    return arr


def load_image(path: str, *, channels: int = 1) -> np.ndarray:
    """Load a PNG or CSV image file. ``channels`` applies to CSV grids only."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".png":
        return _load_png(path)
    if ext == ".csv":
        return _load_csv(path, channels)
    raise ValueError(f"unsupported image format {ext!r} (expected .png or .csv)")


def _load_png(path: str) -> np.ndarray:
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        if im.mode in ("1", "L", "I;16", "I"):
            im = im.convert("L")
            arr = np.asarray(im, dtype=np.float64)[:, :, None]
        else:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64)
    return as_image(arr / 255.0)


def _load_csv(path: str, channels: int) -> np.ndarray:
    grid = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    h, wc = grid.shape
    if channels < 1 or wc % channels:
        raise ShapeMismatch(f"CSV row length {wc} not divisible by {channels} channels")
    return as_image(grid.reshape(h, wc // channels, channels))


def save_image_png(x: np.ndarray, path: str) -> None:
    from PIL import Image as PILImage

    arr = as_image(x)
    quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[2] == 1:
        im = PILImage.fromarray(quantized[:, :, 0], mode="L")
    elif arr.shape[2] == 3:
        im = PILImage.fromarray(quantized, mode="RGB")
    else:
        raise ShapeMismatch(f"PNG export supports 1 or 3 channels, got {arr.shape[2]}")
    im.save(path, format="PNG")


def save_image_csv(x: np.ndarray, path: str) -> None:
    arr = as_image(x)
    h, w, c = arr.shape
    with open(path, "w", encoding="utf-8") as f:
        for row in arr.reshape(h, w * c):
            f.write(",".join(repr(v) for v in row) + "\n")
