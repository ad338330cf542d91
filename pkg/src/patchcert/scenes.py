"""Deterministic synthetic scenes for desk-scale runs and audits.

Color-band images whose per-pixel dominant channel encodes the class, so
the toy dominant-channel segmenter recovers the ground truth exactly on
clean input while reconstruction errors still show up near band borders.
"""

from __future__ import annotations

import numpy as np

from .grid import ImageGrid, SegMap

_BAND_CHANNELS = (0, 1, 2)  # red, green, blue -> class 0, 1, 2


def color_band_scene(
    height: int,
    width: int,
    orientation: str = "h",
    bands: int = 2,
    seed: int = 0,
) -> tuple[ImageGrid, SegMap]:
    """An image of solid color bands plus its ground-truth segmentation.

    Band intensity varies per pixel (seeded) between 0.55 and 1.0 on the
    dominant channel only, so images are not constant but the class rule
    is unambiguous everywhere.
    """
    if bands < 1:
        raise ValueError("bands must be >= 1")
    rng = np.random.default_rng(seed)
    data = np.zeros((height, width, 3), dtype=np.float32)
    labels = np.zeros((height, width), dtype=np.int32)
    extent = height if orientation == "h" else width
    band_size = max(1, extent // bands)
    for b in range(bands):
        start = b * band_size
        stop = extent if b == bands - 1 else min(extent, (b + 1) * band_size)
        if start >= extent:
            break
        ch = _BAND_CHANNELS[b % len(_BAND_CHANNELS)]
        if orientation == "h":
            shape = (stop - start, width)
            data[start:stop, :, ch] = 0.55 + 0.45 * rng.random(shape, dtype=np.float32)
            labels[start:stop, :] = ch
        else:
            shape = (height, stop - start)
            data[:, start:stop, ch] = 0.55 + 0.45 * rng.random(shape, dtype=np.float32)
            labels[:, start:stop] = ch
    # Snap to the 8-bit grid so PNG round trips are bit-exact.
    data = np.round(data * 255.0).astype(np.float32) / 255.0
    return ImageGrid(data), SegMap(labels, 3)


def scene_battery(seed: int = 0) -> list[tuple[str, ImageGrid, SegMap]]:
    """A small varied set of named scenes for audits and tests."""
    specs = [
        ("h2_16", 16, 16, "h", 2),
        ("v2_16", 16, 16, "v", 2),
        ("h3_18", 18, 18, "h", 3),
        ("v3_20", 20, 20, "v", 3),
        ("h2_24", 24, 24, "h", 2),
    ]
    out = []
    for i, (name, h, w, orient, bands) in enumerate(specs):
        image, gt = color_band_scene(h, w, orient, bands, seed=seed + i)
        out.append((name, image, gt))
    return out
