"""Domain types for images, masks, segmentations, the patch threat model,
and the primitive operators on them (patch application, masking, covering).

All types are immutable after construction (backing numpy arrays are made
read-only), so instances can be freely shared across threads. Every
operation returns a fresh object and never mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatchError, GeometryError


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


class ImageGrid:
    """H x W x C pixel buffer with intensities in [0, 1].

    Intensities live in [0, 1] as float32 internally; I/O boundaries use
    8-bit per channel (see :meth:`from_u8` / :meth:`to_u8`). Bit-exact
    comparisons (the masking-erasure checks) are done on the 8-bit view.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float32, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise GeometryError(f"image must be HxWxC, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise GeometryError(f"image dimensions must be >= 1, got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise GeometryError("image intensities must lie in [0, 1]")
        self.data = _freeze(arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "ImageGrid":
        # Internal fast path for arrays we just produced ourselves.
        out = object.__new__(cls)
        out.data = _freeze(arr)
        return out

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_u8(cls, arr) -> "ImageGrid":
        arr = np.asarray(arr, dtype=np.uint8)
        return cls(arr.astype(np.float32) / 255.0)

    def to_u8(self) -> np.ndarray:
        return np.round(self.data * 255.0).astype(np.uint8)

    def bit_equal(self, other: "ImageGrid") -> bool:
        """Equality on the 8-bit representation."""
        return self.data.shape == other.data.shape and np.array_equal(
            self.to_u8(), other.to_u8()
        )

    def __repr__(self):
        return f"ImageGrid({self.height}x{self.width}x{self.channels})"


class MaskGrid:
    """Per-pixel visibility grid: True = visible, False = masked.

    A masked pixel carries no information; the zero fill that
    :func:`apply_mask` produces is a placeholder, not content.
    """

    __slots__ = ("visible",)

    def __init__(self, visible):
        arr = np.array(visible, dtype=bool, copy=True)
        if arr.ndim != 2:
            raise GeometryError(f"mask must be HxW, got shape {arr.shape}")
        self.visible = _freeze(arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "MaskGrid":
        out = object.__new__(cls)
        out.visible = _freeze(arr)
        return out

    @property
    def height(self) -> int:
        return self.visible.shape[0]

    @property
    def width(self) -> int:
        return self.visible.shape[1]

    def __repr__(self):
        vis = int(self.visible.sum())
        return f"MaskGrid({self.height}x{self.width}, {vis} visible)"


class SegMap:
    """Per-pixel class labels in [0, num_classes).

    An optional ``ignore_label`` (outside the class range, e.g. 255) marks
    pixels excluded from every metric; it may appear in ground-truth maps.
    """

    __slots__ = ("labels", "num_classes", "ignore_label")

    def __init__(self, labels, num_classes: int, ignore_label: int | None = None):
        arr = np.array(labels, dtype=np.int32, copy=True)
        if arr.ndim != 2:
            raise GeometryError(f"segmentation map must be HxW, got shape {arr.shape}")
        if num_classes < 1:
            raise GeometryError("num_classes must be >= 1")
        valid = (arr >= 0) & (arr < num_classes)
        if ignore_label is not None:
            valid |= arr == ignore_label
        if not valid.all():
            bad = arr[~valid].flat[0]
            raise GeometryError(
                f"label {bad} outside [0, {num_classes}) and not the ignore label"
            )
        self.labels = _freeze(arr)
        self.num_classes = int(num_classes)
        self.ignore_label = ignore_label

    @classmethod
    def _wrap(cls, arr, num_classes, ignore_label=None) -> "SegMap":
        out = object.__new__(cls)
        out.labels = _freeze(arr)
        out.num_classes = num_classes
        out.ignore_label = ignore_label
        return out

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def __repr__(self):
        return f"SegMap({self.height}x{self.width}, {self.num_classes} classes)"


@dataclass(frozen=True)
class PatchLocation:
    """Axis-aligned patch rectangle; a compact form of the binary location mask."""

    top: int
    left: int
    height: int
    width: int

    def slices(self) -> tuple[slice, slice]:
        return (
            slice(self.top, self.top + self.height),
            slice(self.left, self.left + self.width),
        )

    def validate_for(self, height: int, width: int) -> None:
        if self.height < 1 or self.width < 1:
            raise GeometryError(f"patch must be at least 1x1, got {self}")
        if self.top < 0 or self.left < 0:
            raise GeometryError(f"patch origin must be non-negative, got {self}")
        if self.top + self.height > height or self.left + self.width > width:
            raise GeometryError(
                f"patch {self} exceeds image bounds {height}x{width}"
            )


@dataclass(frozen=True)
class ThreatModel:
    """All placements of an H' x W' rectangle inside an H x W image,
    optionally repeated for N simultaneous patches."""

    patch_height: int
    patch_width: int
    image_height: int
    image_width: int
    num_patches: int = 1

    def __post_init__(self):
        if self.patch_height < 1 or self.patch_width < 1:
            raise GeometryError("patch dimensions must be >= 1")
        if self.num_patches < 1:
            raise GeometryError("num_patches must be >= 1")
        if (
            self.patch_height > self.image_height
            or self.patch_width > self.image_width
        ):
            raise GeometryError(
                f"patch {self.patch_height}x{self.patch_width} larger than image "
                f"{self.image_height}x{self.image_width}"
            )

    @property
    def num_locations(self) -> int:
        return (self.image_height - self.patch_height + 1) * (
            self.image_width - self.patch_width + 1
        )


class MaskedImage(NamedTuple):
    """A zero-filled buffer paired with the mask that says which pixels are real.

    Backends receive both and must never treat the zero fill as content.
    """

    image: ImageGrid
    mask: MaskGrid


def _check_same_hw(a_h, a_w, b_h, b_w, what):
    if (a_h, a_w) != (b_h, b_w):
        raise DimensionMismatchError(f"{what}: {a_h}x{a_w} vs {b_h}x{b_w}")


def apply_patch(image: ImageGrid, content: ImageGrid, loc: PatchLocation) -> ImageGrid:
    """Paste the ``loc`` sub-rectangle of ``content`` onto ``image``.

    Only the rectangle of ``content`` under ``loc`` is used; the rest of
    ``content`` is ignored. The input image is unmodified.
    """
    if image.data.shape != content.data.shape:
        raise DimensionMismatchError(
            f"patch content shape {content.data.shape} != image shape {image.data.shape}"
        )
    loc.validate_for(image.height, image.width)
    out = image.data.copy()
    rs, cs = loc.slices()
    out[rs, cs, :] = content.data[rs, cs, :]
    return ImageGrid._wrap(out)


def apply_mask(image: ImageGrid, mask: MaskGrid) -> MaskedImage:
    """Zero out masked pixels and return the buffer together with the mask."""
    _check_same_hw(image.height, image.width, mask.height, mask.width, "apply_mask")
    out = image.data * mask.visible[:, :, None]
    return MaskedImage(ImageGrid._wrap(out), mask)


def covers(mask: MaskGrid, loc: PatchLocation) -> bool:
    """True iff every pixel of the patch rectangle is masked, so no patch
    content placed there can influence the masked image."""
    loc.validate_for(mask.height, mask.width)
    rs, cs = loc.slices()
    return not bool(mask.visible[rs, cs].any())


def enumerate_locations(tm: ThreatModel) -> list[PatchLocation]:
    """All patch placements, row-major, no duplicates."""
    return [
        PatchLocation(t, l, tm.patch_height, tm.patch_width)
        for t in range(tm.image_height - tm.patch_height + 1)
        for l in range(tm.image_width - tm.patch_width + 1)
    ]
