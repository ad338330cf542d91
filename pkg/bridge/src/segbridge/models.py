"""Model implementations behind the bridge.

A model is anything with::

    num_classes: int
    deterministic: bool
    demask(image: float32 HxWxC, visible: bool HxW) -> float32 HxWxC
    segment(image: float32 HxWxC) -> int labels HxW

``image`` always arrives with masked pixels zeroized; ``visible`` is the
mask channel. Built-ins: ``stub`` (echo + constant labels, for protocol
testing) and ``nearest`` (distance-transform inpainting + per-pixel color
rule, a usable non-neural reference). Real models plug in through
``import:<module>:<factory>`` or a config file; the optional resize policy
wraps any of them, resizing image and mask identically and restoring the
native resolution on output.
"""

from __future__ import annotations

import importlib

import numpy as np
from PIL import Image
from scipy import ndimage


class StubModel:
    """Identity reconstruction and all-zero labels."""

    deterministic = True

    def __init__(self, num_classes: int = 3):
        self.num_classes = num_classes

    def demask(self, image, visible):
        return image

    def segment(self, image):
        return np.zeros(image.shape[:2], dtype=np.int64)


class NearestModel:
    """Nearest-visible-pixel inpainting (exact Euclidean distance
    transform) and a per-pixel label rule: dominant channel for color
    input, intensity quantization for grayscale."""

    deterministic = True

    def __init__(self, num_classes: int = 3, fill_value: float = 0.5):
        self.num_classes = num_classes
        self.fill_value = fill_value

    def demask(self, image, visible):
        if visible.all():
            return image
        if not visible.any():
            return np.full_like(image, self.fill_value)
        _, (iy, ix) = ndimage.distance_transform_edt(~visible, return_indices=True)
        return image[iy, ix]

    def segment(self, image):
        if image.shape[2] >= 3:
            labels = np.argmax(image, axis=2).astype(np.int64)
            return np.minimum(labels, self.num_classes - 1)
        mean = image.mean(axis=2)
        return np.clip((mean * self.num_classes).astype(np.int64), 0, self.num_classes - 1)


class ResizeWrapper:
    """Runs a fixed-input-size model: image and mask are resized to
    ``side`` x ``side`` together (bilinear for the image, nearest for the
    mask), the output is restored to the native resolution."""

    def __init__(self, model, side: int):
        self.model = model
        self.side = int(side)
        self.num_classes = model.num_classes
        self.deterministic = model.deterministic

    def _resize_image(self, arr, size):
        chans = [
            np.asarray(
                Image.fromarray(arr[:, :, c].astype(np.float32), mode="F").resize(
                    size, Image.BILINEAR
                )
            )
            for c in range(arr.shape[2])
        ]
        return np.clip(np.stack(chans, axis=2), 0.0, 1.0).astype(np.float32)

    def demask(self, image, visible):
        h, w = visible.shape
        small = self._resize_image(image, (self.side, self.side))
        small_mask = np.asarray(
            Image.fromarray(visible.astype(np.uint8) * 255, mode="L").resize(
                (self.side, self.side), Image.NEAREST
            )
        ) != 0
        small[~small_mask] = 0.0  # keep masked pixels zeroized after resize
        out = self.model.demask(small, small_mask)
        return self._resize_image(out, (w, h))

    def segment(self, image):
        h, w = image.shape[:2]
        small = self._resize_image(image, (self.side, self.side))
        labels = self.model.segment(small)
        restored = Image.fromarray(labels.astype(np.int32), mode="I").resize(
            (w, h), Image.NEAREST
        )
        return np.asarray(restored).astype(np.int64)


def load_model(spec: str, num_classes: int, seed: int | None = None,
               weights: str | None = None, device: str | None = None):
    """Build a model from its spec string.

    ``stub`` and ``nearest`` are built in; ``import:<module>:<factory>``
    calls ``factory(num_classes=..., seed=..., weights=..., device=...)``.
    Raises on anything else so the server can refuse the handshake.
    """
    if spec == "stub":
        return StubModel(num_classes)
    if spec == "nearest":
        return NearestModel(num_classes)
    if spec.startswith("import:"):
        target = spec[len("import:"):]
        module_name, _, factory_name = target.rpartition(":")
        if not module_name:
            raise ValueError(f"bad import spec {spec!r}, need import:<module>:<factory>")
        module = importlib.import_module(module_name)
        factory = getattr(module, factory_name)
        return factory(num_classes=num_classes, seed=seed, weights=weights, device=device)
    raise ValueError(f"unknown model {spec!r} (use stub, nearest, or import:<module>:<factory>)")
