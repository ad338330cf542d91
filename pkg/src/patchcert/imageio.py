"""File formats at the engine boundary.

Images are 8-bit PNG (RGB or grayscale). Masks are PGM P5 with 0 = masked
and 255 = visible. Segmentation maps are PGM P5 with the class index as the
pixel value when num_classes <= 256, otherwise a raw little-endian format:
16-byte header (magic ``SEG1``, u32 height, u32 width, u32 num_classes)
followed by height*width u16 labels.

All writers go through :func:`atomic_write` (temp file + rename) and emit
byte-stable output for identical inputs.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import GeometryError
from .grid import ImageGrid, MaskGrid, SegMap

MASK_VISIBLE = 255
MASK_HIDDEN = 0
SEG1_MAGIC = b"SEG1"


def atomic_write(path, data: bytes) -> None:
    """Write bytes to ``path`` via a temp file in the same directory + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------- PNG images


def read_png(path) -> ImageGrid:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    return ImageGrid.from_u8(arr)


def write_png(path, image: ImageGrid) -> None:
    arr = image.to_u8()
    if arr.shape[2] == 1:
        im = Image.fromarray(arr[:, :, 0], mode="L")
    elif arr.shape[2] == 3:
        im = Image.fromarray(arr, mode="RGB")
    else:
        raise GeometryError(f"cannot encode {arr.shape[2]}-channel image as PNG")
    import io as _io

    buf = _io.BytesIO()
    im.save(buf, format="PNG")
    atomic_write(path, buf.getvalue())


# ----------------------------------------------------------------- PGM (P5)


def write_pgm(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.uint8)
    if arr.ndim != 2:
        raise GeometryError(f"PGM payload must be HxW, got {arr.shape}")
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    atomic_write(path, header + arr.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise GeometryError(f"{path}: not a binary PGM (P5) file")
    # Header tokens may be separated by whitespace and '#' comments.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval > 255:
        raise GeometryError(f"{path}: 16-bit PGM not supported")
    payload = data[pos : pos + width * height]
    if len(payload) != width * height:
        raise GeometryError(f"{path}: truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def write_mask(path, mask: MaskGrid) -> None:
    write_pgm(path, np.where(mask.visible, MASK_VISIBLE, MASK_HIDDEN))


def read_mask(path) -> MaskGrid:
    return MaskGrid(read_pgm(path) != MASK_HIDDEN)


# ---------------------------------------------------------- segmentation maps


def segmap_filename(stem: str, num_classes: int) -> str:
    return f"{stem}.pgm" if num_classes <= 256 else f"{stem}.seg"


def write_segmap(path, seg: SegMap) -> None:
    path = Path(path)
    if path.suffix == ".pgm":
        if seg.labels.max(initial=0) > 255:
            raise GeometryError("labels exceed 255; use the .seg raw format")
        write_pgm(path, seg.labels.astype(np.uint8))
        return
    header = SEG1_MAGIC + struct.pack(
        "<III", seg.height, seg.width, seg.num_classes
    )
    atomic_write(path, header + seg.labels.astype("<u2").tobytes())


def read_segmap(path, num_classes: int | None = None, ignore_label: int | None = None) -> SegMap:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == SEG1_MAGIC:
        with open(path, "rb") as fh:
            head = fh.read(16)
            height, width, ncls = struct.unpack("<III", head[4:16])
            labels = np.frombuffer(fh.read(height * width * 2), dtype="<u2")
        if labels.size != height * width:
            raise GeometryError(f"{path}: truncated SEG1 payload")
        return SegMap(labels.reshape(height, width), num_classes or ncls, ignore_label)
    labels = read_pgm(path)
    if num_classes is None:
        raise GeometryError(f"{path}: num_classes required to read a PGM segmap")
    return SegMap(labels, num_classes, ignore_label)


# ------------------------------------------------------------------ palettes


def _build_palette(n: int = 256) -> np.ndarray:
    # Fixed, deterministic palette: golden-angle hue walk at two lightness
    # levels, index 0 stays black so "uncertified" renders black.
    import colorsys

    pal = np.zeros((n, 3), dtype=np.uint8)
    for i in range(1, n):
        hue = (i * 0.61803398875) % 1.0
        val = 0.95 if i % 2 else 0.65
        r, g, b = colorsys.hsv_to_rgb(hue, 0.85, val)
        pal[i] = (round(r * 255), round(g * 255), round(b * 255))
    return pal


PALETTE = _build_palette()


def colorize_segmap(seg: SegMap, cert_map: np.ndarray | None = None) -> ImageGrid:
    """Render labels through the fixed palette; uncertified pixels go black."""
    idx = (seg.labels % 255) + 1
    if seg.ignore_label is not None:
        idx = np.where(seg.labels == seg.ignore_label, 0, idx)
    if cert_map is not None:
        idx = np.where(cert_map, idx, 0)
    rgb = PALETTE[idx]
    return ImageGrid.from_u8(rgb)
