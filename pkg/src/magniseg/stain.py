"""Stain normalization by color transfer.

Tiles are mapped into a perceptually decorrelated color space (CIELAB), where
each channel's mean and standard deviation are matched to a reference tile's
statistics, then mapped back to RGB. The reference statistics are computed once
and persisted in the tile manifest so normalization is reproducible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from skimage import color

from .errors import InputError

# floor on a channel std to keep constant images from dividing by zero
STD_EPS = 1e-6


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and standard deviation in the decorrelated space."""

    mean: tuple
    std: tuple

    def __post_init__(self):
        mean = tuple(float(v) for v in self.mean)
        std = tuple(float(v) for v in self.std)
        if len(mean) != 3 or len(std) != 3:
            raise InputError("channel stats need exactly 3 means and 3 stds")
        if not all(np.isfinite(mean)) or not all(np.isfinite(std)):
            raise InputError("channel stats must be finite")
        if any(s <= 0 for s in std):
            raise InputError("channel stds must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        return cls(mean=tuple(d["mean"]), std=tuple(d["std"]))


def _check_rgb(pixels) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InputError(f"expected an HxWx3 RGB image, got shape {pixels.shape}")
    return pixels


def compute_channel_stats(pixels: np.ndarray) -> ChannelStats:
    """Reference statistics of an RGB [0, 1] tile in the decorrelated space."""
    lab = color.rgb2lab(_check_rgb(pixels))
    mean = lab.mean(axis=(0, 1))
    std = lab.std(axis=(0, 1))
    floored = np.maximum(std, STD_EPS)
    return ChannelStats(mean=tuple(mean), std=tuple(floored))


def reinhard_normalize(pixels: np.ndarray, target: ChannelStats) -> np.ndarray:
    """Match a tile's decorrelated channel statistics to the target's.

    A zero-variance source channel (constant color) is given an epsilon std so
    the transfer degenerates gracefully to a pure mean shift; a warning is
    emitted. Output is clipped back to valid RGB.
    """
    lab = color.rgb2lab(_check_rgb(pixels))
    src_mean = lab.mean(axis=(0, 1))
    src_std = lab.std(axis=(0, 1))
    if np.any(src_std < STD_EPS):
        warnings.warn(
            "constant color channel in source tile; std floored for color transfer",
            stacklevel=2,
        )
        src_std = np.maximum(src_std, STD_EPS)
    scaled = (lab - src_mean) / src_std * np.asarray(target.std) + np.asarray(target.mean)
    with warnings.catch_warnings():
        # out-of-gamut targets trip skimage's conversion warnings; clipping handles them
        warnings.simplefilter("ignore")
        rgb = color.lab2rgb(scaled)
    return np.clip(rgb, 0.0, 1.0)
