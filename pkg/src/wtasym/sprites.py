"""Procedural categorical sprites: coloured shapes on an 8 x 8 position grid.

Images are 64 x 64 x 3 with a black background. Every shape is stamped from
a fixed 8 x 8 cell mask, so moving one grid step shifts the pixels by exactly
eight.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .latents import LatentStructure, enumerate_categories

SHAPES = ("rectangle", "ellipse", "heart")
GRID = 8
CELL = 8
SIZE = GRID * CELL
STRUCTURE = LatentStructure((3, GRID, GRID, 10))

# Coarse RGB lattice {0, .5, 1}^3 without black, ordered so the first ten
# entries vary across channels as much as possible.
_LATTICE = (
    (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (1.0, 1.0, 0.0), (1.0, 0.0, 1.0),
    (0.0, 1.0, 1.0), (1.0, 1.0, 1.0), (1.0, 0.5, 0.0), (0.5, 0.0, 1.0), (0.0, 1.0, 0.5),
    (0.5, 1.0, 0.0), (1.0, 0.0, 0.5), (0.0, 0.5, 1.0), (0.5, 0.5, 0.5), (1.0, 0.5, 1.0),
    (0.5, 1.0, 1.0), (1.0, 1.0, 0.5), (0.5, 0.0, 0.0), (0.0, 0.5, 0.0), (0.0, 0.0, 0.5),
    (0.5, 0.5, 0.0), (0.5, 0.0, 0.5), (0.0, 0.5, 0.5), (1.0, 0.5, 0.5), (0.5, 1.0, 0.5),
    (0.5, 0.5, 1.0),
)


@dataclass(frozen=True)
class SpriteFactors:
    shape: int
    pos_x: int
    pos_y: int
    color: int

    def __post_init__(self) -> None:
        for v, hi in zip((self.shape, self.pos_x, self.pos_y, self.color), STRUCTURE.counts):
            if not 0 <= v < hi:
                raise ValueError(f"invalid sprite factors {self}")


def build_palette(count: int = 10) -> np.ndarray:
    if not 1 <= count <= len(_LATTICE):
        raise ValueError(f"palette size must be between 1 and {len(_LATTICE)}")
    return np.array(_LATTICE[:count])


def _cell_masks() -> dict[int, np.ndarray]:
    # Pixel centres in a cell, scaled so the 6 inner pixels span [-1, 1].
    c = (np.arange(CELL) + 0.5 - CELL / 2) / 3.0
    u, v = np.meshgrid(c, c)  # u: column (x), v: row (y, pointing down)
    inside = (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
    rect = (np.abs(u) <= 1.0) & (np.abs(v) <= 0.7)
    ellipse = u ** 2 + v ** 2 <= 1.0
    hx, hy = 1.25 * u, -1.25 * v + 0.35
    heart = (hx ** 2 + hy ** 2 - 1.0) ** 3 - hx ** 2 * hy ** 3 <= 0.0
    return {0: rect & inside, 1: ellipse & inside, 2: heart & inside}


_MASKS = _cell_masks()


def shape_mask(shape: int) -> np.ndarray:
    return _MASKS[shape].copy()


def render(f: SpriteFactors, palette: np.ndarray | None = None) -> np.ndarray:
    palette = build_palette() if palette is None else palette
    img = np.zeros((SIZE, SIZE, 3))
    r0, c0 = f.pos_y * CELL, f.pos_x * CELL
    img[r0:r0 + CELL, c0:c0 + CELL][_MASKS[f.shape]] = palette[f.color]
    return img


def render_categories(cats: np.ndarray, palette: np.ndarray | None = None) -> np.ndarray:
    """Flattened images for an array of (shape, pos_x, pos_y, color) rows."""
    palette = build_palette() if palette is None else palette
    cats = np.asarray(cats)
    x = np.zeros((len(cats), SIZE * SIZE * 3))
    for i, c in enumerate(cats):
        x[i] = render(SpriteFactors(*map(int, c)), palette).ravel()
    return x


def render_corpus(palette: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """All 1920 factor tuples (lexicographic) and their flattened images."""
    palette = build_palette() if palette is None else palette
    cats = enumerate_categories(STRUCTURE)
    return cats, render_categories(cats, palette)


def make_vision_split(cats: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index arrays: val = ellipse x colours 0-2, test = rectangle x colours 3-5, rest train."""
    val = (cats[:, 0] == 1) & np.isin(cats[:, 3], (0, 1, 2))
    test = (cats[:, 0] == 0) & np.isin(cats[:, 3], (3, 4, 5))
    train = ~(val | test)
    return np.flatnonzero(train), np.flatnonzero(val), np.flatnonzero(test)


def save_png(img: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    Image.fromarray(np.rint(img * 255).astype(np.uint8), mode="RGB").save(path)
