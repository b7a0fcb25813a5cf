"""Render the sprite corpus and save a handful of images.

Usage: python3 sprites_tour.py [outdir]   (needs Pillow for the PNGs)
"""
import sys
from pathlib import Path

import numpy as np

from wtasym.sprites import SHAPES, SIZE, make_vision_split, render_corpus, save_png

out = Path(sys.argv[1] if len(sys.argv) > 1 else "sprites")
out.mkdir(exist_ok=True)
cats, x = render_corpus()
train, val, test = make_vision_split(cats)
print(f"{len(cats)} images of {SIZE}x{SIZE}; split {len(train)}/{len(val)}/{len(test)}")
print("held out for testing: every", SHAPES[0], "in colours 3-5")

for i in np.linspace(0, len(cats) - 1, 8).astype(int):
    shape, px, py, colour = cats[i]
    name = out / f"{SHAPES[shape]}_{px}_{py}_c{colour}.png"
    save_png(x[i].reshape(SIZE, SIZE, 3), name)
    print("wrote", name)
