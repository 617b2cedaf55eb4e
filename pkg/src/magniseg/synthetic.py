"""Synthetic multi-magnification blob tiles for desk-scale end-to-end checks.

Tiles imitate stained tissue just enough for the pipeline to be meaningful:
a textured pink background whose statistics do not depend on the level, and
dark purple elliptical blobs whose size scales with the magnification. Blob
geometry is the only scale cue, so a model that solves the pretext task must
attend to the blobs. Ground-truth masks and instance maps come for free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from . import pngio
from .errors import ConfigurationError
from .tiles import ScaleSet, TileEntry, TileManifest, detect_tissue_fraction

DEFAULT_TILE_SIZE = 160

# mean blob radius in pixels per unit magnification, at the reference tile size:
# 0.4 * {10, 20, 40} = 4 / 8 / 16 px for 160 px tiles
RADIUS_PER_MAGNIFICATION = 0.4
TARGET_FOREGROUND_FRACTION = 0.07

BACKGROUND_RGB = np.array([0.88, 0.70, 0.79])  # eosin-like pink
BLOB_RGB = np.array([0.33, 0.22, 0.48])  # hematoxylin-like dark purple
COLOR_JITTER = 0.05
RADIUS_JITTER = 0.25
MAX_AXIS_RATIO = 2.0  # eccentricity cap: major/minor axis ratio


@dataclass
class SynthTile:
    pixels: np.ndarray  # RGB float in [0, 1]
    magnification_label: int
    gt_mask: np.ndarray  # bool
    gt_instances: np.ndarray  # int32, 0 = background


def mean_blob_radius(level: int, scale_set: ScaleSet, tile_size: int) -> float:
    """Blob radius grows linearly with magnification and with tile size."""
    return RADIUS_PER_MAGNIFICATION * scale_set.levels[level] * (tile_size / DEFAULT_TILE_SIZE)


def _background(tile_size: int, rng: np.random.Generator) -> np.ndarray:
    # low-frequency fiber-like field plus fine grain; the process has no level
    # dependence, so texture statistics are identical across magnifications
    coarse = gaussian_filter(rng.standard_normal((tile_size, tile_size)), sigma=2.0)
    coarse /= max(coarse.std(), 1e-9)
    fine = rng.standard_normal((tile_size, tile_size))
    field = 0.035 * coarse + 0.01 * fine
    pixels = BACKGROUND_RGB[None, None, :] + field[:, :, None]
    return np.clip(pixels, 0.0, 1.0)


def generate_blob_tile(
    level: int,
    scale_set: ScaleSet,
    tile_size: int = DEFAULT_TILE_SIZE,
    rng: np.random.Generator | None = None,
) -> SynthTile:
    """One tile at the given level, with blob count tuned so the expected
    foreground covers about 7% of the pixels.

    Blobs are rejection-placed so that instances never touch and stay fully
    inside the tile.
    """
    if not 0 <= level < scale_set.count:
        raise ConfigurationError(f"level {level} outside [0, {scale_set.count})")
    radius = mean_blob_radius(level, scale_set, tile_size)
    if radius >= tile_size / 2:
        raise ConfigurationError(
            f"blob radius {radius:.1f} does not fit a {tile_size} px tile"
        )
    rng = rng or np.random.default_rng()

    pixels = _background(tile_size, rng)
    instances = np.zeros((tile_size, tile_size), dtype=np.int32)
    count = max(1, round(TARGET_FOREGROUND_FRACTION * tile_size**2 / (np.pi * radius**2)))

    yy, xx = np.mgrid[0:tile_size, 0:tile_size]
    placed = []  # (cy, cx, max_semi_axis)
    label = 0
    for _ in range(count):
        for _attempt in range(200):
            r = radius * rng.uniform(1.0 - RADIUS_JITTER, 1.0 + RADIUS_JITTER)
            ecc = rng.uniform(1.0, np.sqrt(MAX_AXIS_RATIO))
            a, b = r * ecc, r / ecc  # geometric-mean radius stays r
            theta = rng.uniform(0.0, np.pi)
            margin = a + 1.0
            if tile_size - 2 * margin <= 1:
                break
            cy = rng.uniform(margin, tile_size - margin)
            cx = rng.uniform(margin, tile_size - margin)
            if all(np.hypot(cy - py, cx - px) > a + pa + 1.0 for py, px, pa in placed):
                break
        else:
            continue  # tile stays a little sparser than the target
        label += 1
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        u = (xx - cx) * cos_t + (yy - cy) * sin_t
        v = -(xx - cx) * sin_t + (yy - cy) * cos_t
        inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        instances[inside] = label
        blob_color = np.clip(
            BLOB_RGB + rng.uniform(-COLOR_JITTER, COLOR_JITTER, size=3), 0.0, 1.0
        )
        pixels[inside] = blob_color
        placed.append((cy, cx, a))

    return SynthTile(
        pixels=pixels,
        magnification_label=level,
        gt_mask=instances > 0,
        gt_instances=instances,
    )


def generate_dataset(
    n_per_level: int,
    out_dir,
    rng: np.random.Generator,
    scale_set: ScaleSet | None = None,
    tile_size: int = DEFAULT_TILE_SIZE,
    source_id: str = "synth",
) -> TileManifest:
    """Write a balanced synthetic dataset: tiles, masks, instance maps, manifest.

    Layout under out_dir: tiles/{stem}.png, masks/{stem}.png (0/255),
    instances/{stem}.png (16-bit labels), manifest.jsonl. Stems follow the
    tile-cache convention {source_id}_{level}_{x}_{y}.
    """
    if n_per_level < 1:
        raise ConfigurationError(f"n_per_level must be >= 1, got {n_per_level}")
    scale_set = scale_set or ScaleSet()
    out_dir = Path(out_dir)
    for sub in ("tiles", "masks", "instances"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    manifest = TileManifest(scale_set=scale_set, tile_size=tile_size)
    for level in range(scale_set.count):
        for index in range(n_per_level):
            tile = generate_blob_tile(level, scale_set, tile_size, rng)
            entry = TileEntry(
                source_id=source_id,
                level=level,
                x=index,
                y=0,
                tissue_fraction=detect_tissue_fraction(tile.pixels),
            )
            pngio.save_rgb(out_dir / "tiles" / f"{entry.stem}.png", tile.pixels)
            mask_u8 = (tile.gt_mask * np.uint8(255)).astype(np.uint8)
            Image.fromarray(mask_u8, mode="L").save(out_dir / "masks" / f"{entry.stem}.png")
            pngio.save_labels(out_dir / "instances" / f"{entry.stem}.png", tile.gt_instances)
            manifest.add(entry)

    manifest.save(out_dir / "manifest.jsonl")
    with (out_dir / "dataset.json").open("w") as fh:
        json.dump(
            {
                "tile_size": tile_size,
                "levels": list(scale_set.levels),
                "n_per_level": n_per_level,
            },
            fh,
            indent=2,
        )
    return manifest
