"""Lossless PNG I/O for the on-disk interchange formats.

Conventions:
  * RGB tiles: 8-bit PNG, in memory as float arrays in [0, 1], shape (H, W, 3).
  * Attention maps: 16-bit grayscale PNG, value = round(A * 65535).
  * Instance label maps: 16-bit grayscale PNG, raw label values (0 = background).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError

MAX_U16 = 65535


def save_rgb(path, pixels: np.ndarray) -> None:
    """Write an RGB float image in [0, 1] as an 8-bit PNG."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InputError(f"expected HxWx3 RGB array, got shape {pixels.shape}")
    data = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(Path(path), format="PNG")


def load_rgb(path) -> np.ndarray:
    """Read an image file into an RGB float array in [0, 1]."""
    with Image.open(Path(path)) as im:
        data = np.asarray(im.convert("RGB"), dtype=np.float64)
    return data / 255.0


def save_attention(path, attention: np.ndarray) -> None:
    """Write an attention map in [0, 1] as a 16-bit grayscale PNG."""
    attention = np.asarray(attention, dtype=np.float64)
    if attention.ndim == 3 and attention.shape[0] == 1:
        attention = attention[0]
    if attention.ndim != 2:
        raise InputError(f"expected a single-channel map, got shape {attention.shape}")
    data = np.clip(np.rint(attention * MAX_U16), 0, MAX_U16).astype(np.uint16)
    Image.fromarray(data).save(Path(path), format="PNG")


def load_attention(path) -> np.ndarray:
    """Read a 16-bit attention PNG back into floats in [0, 1]."""
    return _load_u16(path).astype(np.float64) / MAX_U16


def save_labels(path, labels: np.ndarray) -> None:
    """Write an instance label map as a 16-bit grayscale PNG."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise InputError(f"expected a 2-d label map, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() > MAX_U16:
        raise InputError("label values must fit in uint16")
    Image.fromarray(labels.astype(np.uint16)).save(Path(path), format="PNG")


def load_labels(path) -> np.ndarray:
    """Read a 16-bit label PNG into an int32 array."""
    return _load_u16(path).astype(np.int32)


def _load_u16(path) -> np.ndarray:
    # Pillow yields uint16 (mode I;16) or int32 (mode I) depending on build;
    # 16-bit PNG content is 0..65535 either way.
    with Image.open(Path(path)) as im:
        data = np.asarray(im)
    if data.ndim != 2:
        raise InputError(f"{path}: expected single-channel PNG, got shape {data.shape}")
    return data.astype(np.uint16)
