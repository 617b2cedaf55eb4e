"""Tile extraction from pyramidal slides, tissue filtering, manifests, sampling.

A slide is anything that can hand back a full-resolution RGB array per
magnification level. Only a directory-of-images reader ships here; proprietary
scanner formats plug in through the same two-method interface.

Tiles are cut on a non-overlapping grid (partial edge tiles dropped), kept when
they carry enough tissue, and recorded in a JSON-lines manifest from which the
trainer later samples magnification-balanced batches.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Protocol

import numpy as np
from skimage import color

from . import pngio
from .errors import ConfigurationError, InputError
from .stain import ChannelStats

DEFAULT_TILE_SIZE = 224
DEFAULT_TISSUE_THRESHOLD = 0.7

# HSV tissue rule: saturated enough to be stained, dark enough to not be glass
TISSUE_MIN_SATURATION = 0.07
TISSUE_MAX_VALUE = 0.95


@dataclass(frozen=True)
class ScaleSet:
    """The ordered magnification levels tiles are drawn from."""

    levels: tuple = (10.0, 20.0, 40.0)

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        if len(levels) < 1:
            raise ConfigurationError("scale set must contain at least one level")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigurationError(f"levels must be strictly increasing, got {levels}")
        object.__setattr__(self, "levels", levels)

    @property
    def count(self) -> int:
        return len(self.levels)

    def to_dict(self) -> dict:
        return {"levels": list(self.levels)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleSet":
        return cls(levels=tuple(d["levels"]))


@dataclass(frozen=True)
class Tile:
    """An image patch plus the pretext ground truth: where it came from."""

    pixels: np.ndarray  # RGB float in [0, 1], tile_size x tile_size x 3
    magnification_label: int  # index into ScaleSet.levels
    source_id: str
    origin: tuple  # (level, x, y) grid coordinates

    @property
    def stem(self) -> str:
        level, x, y = self.origin
        return f"{self.source_id}_{level}_{x}_{y}"


@dataclass(frozen=True)
class TileEntry:
    source_id: str
    level: int
    x: int
    y: int
    tissue_fraction: float

    @property
    def stem(self) -> str:
        return f"{self.source_id}_{self.level}_{self.x}_{self.y}"

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "level": self.level,
            "x": self.x,
            "y": self.y,
            "tissue_fraction": self.tissue_fraction,
        }


@dataclass
class TileManifest:
    """All kept tiles of a dataset plus the settings that produced them."""

    scale_set: ScaleSet
    tile_size: int
    normalization_target: Optional[ChannelStats] = None
    entries: list = field(default_factory=list)

    def add(self, entry: TileEntry) -> None:
        self.entries.append(entry)

    def per_level_counts(self) -> dict:
        counts = {level: 0 for level in range(self.scale_set.count)}
        for entry in self.entries:
            counts[entry.level] += 1
        return counts

    def entries_for_level(self, level: int) -> list:
        return [e for e in self.entries if e.level == level]

    def save(self, path) -> None:
        path = Path(path)
        header = {
            "scale_set": self.scale_set.to_dict(),
            "tile_size": self.tile_size,
            "normalization_target": (
                self.normalization_target.to_dict() if self.normalization_target else None
            ),
        }
        with path.open("w") as fh:
            fh.write(json.dumps(header) + "\n")
            for entry in self.entries:
                fh.write(json.dumps(entry.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "TileManifest":
        path = Path(path)
        with path.open() as fh:
            lines = [line for line in fh if line.strip()]
        if not lines:
            raise InputError(f"{path}: empty manifest")
        header = json.loads(lines[0])
        target = header.get("normalization_target")
        manifest = cls(
            scale_set=ScaleSet.from_dict(header["scale_set"]),
            tile_size=int(header["tile_size"]),
            normalization_target=ChannelStats.from_dict(target) if target else None,
        )
        for line in lines[1:]:
            d = json.loads(line)
            manifest.add(
                TileEntry(
                    source_id=d["source_id"],
                    level=int(d["level"]),
                    x=int(d["x"]),
                    y=int(d["y"]),
                    tissue_fraction=float(d["tissue_fraction"]),
                )
            )
        return manifest


def detect_tissue_fraction(pixels: np.ndarray) -> float:
    """Fraction of pixels that look like stained tissue under the HSV rule.

    A pixel counts as tissue when it is saturated (not white glass) and not
    close to full brightness (not glare). Both thresholds are module constants.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InputError(f"expected an HxWx3 RGB image, got shape {pixels.shape}")
    if pixels.size == 0:
        raise InputError("empty image")
    hsv = color.rgb2hsv(pixels)
    tissue = (hsv[..., 1] > TISSUE_MIN_SATURATION) & (hsv[..., 2] < TISSUE_MAX_VALUE)
    return float(tissue.mean())


def filter_tile(pixels: np.ndarray, tissue_threshold: float = DEFAULT_TISSUE_THRESHOLD) -> bool:
    """Keep a tile iff its tissue fraction reaches the threshold (inclusive)."""
    if not 0.0 <= tissue_threshold <= 1.0:
        raise ConfigurationError(f"tissue threshold must lie in [0, 1], got {tissue_threshold}")
    return detect_tissue_fraction(pixels) >= tissue_threshold


class SlideReader(Protocol):
    """Pixel access per magnification level; the pluggable slide interface."""

    source_id: str

    def available_levels(self) -> list: ...

    def read_level(self, magnification: float) -> np.ndarray: ...


class DirectorySlide:
    """One slide stored as a directory of per-magnification images.

    Files are named `<magnification>x.<ext>`, e.g. `10x.png`, `40x.png`.
    The directory name is the slide's source id.
    """

    _name_re = re.compile(r"^(\d+(?:\.\d+)?)x\.(png|jpg|jpeg|tif|tiff)$", re.IGNORECASE)

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise InputError(f"slide directory not found: {self.directory}")
        self.source_id = self.directory.name
        self._level_files = {}
        for item in sorted(self.directory.iterdir()):
            m = self._name_re.match(item.name)
            if m:
                self._level_files[float(m.group(1))] = item

    def available_levels(self) -> list:
        return sorted(self._level_files)

    def read_level(self, magnification: float) -> np.ndarray:
        try:
            path = self._level_files[float(magnification)]
        except KeyError:
            raise ConfigurationError(
                f"slide {self.source_id}: magnification {magnification}x not available "
                f"(has {self.available_levels()})"
            ) from None
        return pngio.load_rgb(path)


def extract_tiles(
    slide: SlideReader,
    scale_set: ScaleSet,
    tile_size: int = DEFAULT_TILE_SIZE,
    tissue_threshold: float = DEFAULT_TISSUE_THRESHOLD,
) -> Iterator[tuple]:
    """Cut every level of a slide into grid tiles and keep the tissue ones.

    Yields (Tile, TileEntry) pairs. The grid is non-overlapping with no
    padding; partial tiles at the right/bottom edges are dropped.
    """
    for level_idx, magnification in enumerate(scale_set.levels):
        image = slide.read_level(magnification)
        height, width = image.shape[:2]
        for gy in range(height // tile_size):
            for gx in range(width // tile_size):
                y0, x0 = gy * tile_size, gx * tile_size
                pixels = image[y0 : y0 + tile_size, x0 : x0 + tile_size]
                fraction = detect_tissue_fraction(pixels)
                if fraction < tissue_threshold:
                    continue
                tile = Tile(
                    pixels=pixels,
                    magnification_label=level_idx,
                    source_id=slide.source_id,
                    origin=(level_idx, gx, gy),
                )
                yield tile, TileEntry(
                    source_id=slide.source_id,
                    level=level_idx,
                    x=gx,
                    y=gy,
                    tissue_fraction=fraction,
                )


def sample_balanced_batch(
    manifest: TileManifest, batch_size: int, rng: np.random.Generator
) -> list:
    """Draw a batch whose per-level counts differ by at most one.

    Every level contributes floor(B / N) tiles; the remainder goes to levels
    picked uniformly without replacement. Within a level, tiles are drawn
    uniformly (without replacement while the level is large enough).
    """
    n_levels = manifest.scale_set.count
    if batch_size < n_levels:
        raise ConfigurationError(
            f"batch size {batch_size} is smaller than the number of levels {n_levels}"
        )
    by_level = [manifest.entries_for_level(level) for level in range(n_levels)]
    for level, entries in enumerate(by_level):
        if not entries:
            raise ConfigurationError(f"manifest has no tiles for level {level}")

    base, remainder = divmod(batch_size, n_levels)
    counts = np.full(n_levels, base, dtype=int)
    if remainder:
        counts[rng.choice(n_levels, size=remainder, replace=False)] += 1

    batch = []
    for level, count in enumerate(counts):
        pool = by_level[level]
        replace = count > len(pool)
        picked = rng.choice(len(pool), size=int(count), replace=replace)
        batch.extend(pool[i] for i in picked)
    return batch
