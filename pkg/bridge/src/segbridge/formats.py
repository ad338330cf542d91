"""Image and label-map files the protocol exchanges: 8-bit PNG images,
PGM P5 masks (0 = masked, 255 = visible), and segmentation maps as PGM or
the raw SEG1 format (magic + u32 height/width/num_classes header, then
little-endian u16 labels)."""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

SEG1_MAGIC = b"SEG1"


def read_image(path) -> np.ndarray:
    """HxWxC float32 in [0, 1]."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float32) / 255.0


def write_image(path, arr: np.ndarray) -> None:
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    if data.shape[2] == 1:
        Image.fromarray(data[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(data, mode="RGB").save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    """HxW bool, True = visible."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM mask")
    pos, fields = 2, []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1
    width, height, _ = fields
    payload = np.frombuffer(data[pos : pos + width * height], dtype=np.uint8)
    return (payload.reshape(height, width) != 0).copy()


def write_labels(path, labels: np.ndarray, num_classes: int) -> None:
    """PGM for .pgm paths, SEG1 otherwise."""
    labels = np.asarray(labels)
    if str(path).endswith(".pgm"):
        if labels.max(initial=0) > 255:
            raise ValueError("labels exceed 255, client must request .seg output")
        header = f"P5\n{labels.shape[1]} {labels.shape[0]}\n255\n".encode("ascii")
        with open(path, "wb") as fh:
            fh.write(header + labels.astype(np.uint8).tobytes())
        return
    header = SEG1_MAGIC + struct.pack("<III", labels.shape[0], labels.shape[1], num_classes)
    with open(path, "wb") as fh:
        fh.write(header + labels.astype("<u2").tobytes())
