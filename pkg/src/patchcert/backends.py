"""Pluggable demasking (reconstruction) and segmentation backends, toy
implementations for desk-scale runs, and construction of the per-mask
segmentation set that certification votes over.

The single load-bearing contract: a demasking backend's output is a
function of the visible pixels and the mask only. The zero fill under
masked pixels is a placeholder and must never leak into the output; the
test suite fuzzes the fill to enforce this.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    BackendDimensionError,
    BackendError,
    DimensionMismatchError,
    UnsupportedImageError,
)
from .grid import ImageGrid, MaskedImage, SegMap, apply_mask
from .maskgen import MaskSet


class DemaskingBackend:
    """Reconstructs masked regions from visible content."""

    deterministic: bool = True
    max_inflight: int = 1
    name: str = "demasker"

    def demask(self, masked: MaskedImage) -> ImageGrid:
        raise NotImplementedError


class SegmentationBackend:
    """Assigns a class label to every pixel."""

    deterministic: bool = True
    max_inflight: int = 1
    name: str = "segmenter"
    num_classes: int = 0

    def segment(self, image: ImageGrid) -> SegMap:
        raise NotImplementedError


@dataclass
class SegSet:
    """Segmentations of the K demasked images, in mask order."""

    entries: list[SegMap]

    def __post_init__(self):
        if not self.entries:
            raise BackendError("segmentation set is empty")
        first = self.entries[0]
        for i, seg in enumerate(self.entries):
            if (seg.height, seg.width) != (first.height, first.width):
                raise DimensionMismatchError(f"segmentation {i} has mismatched size")
            if seg.num_classes != first.num_classes:
                raise DimensionMismatchError(f"segmentation {i} has mismatched classes")

    @property
    def k(self) -> int:
        return len(self.entries)

    def stacked(self) -> np.ndarray:
        return np.stack([seg.labels for seg in self.entries])


def _run_one(image, mask, g, f, index):
    masked = apply_mask(image, mask)
    try:
        recon = g.demask(masked)
    except Exception as exc:  # noqa: BLE001 - wrap with mask index
        raise BackendError(f"demasking failed for mask {index}: {exc}") from exc
    if (recon.height, recon.width) != (image.height, image.width):
        raise BackendDimensionError(
            f"demasker returned {recon.height}x{recon.width} for mask {index}, "
            f"expected {image.height}x{image.width}"
        )
    try:
        seg = f.segment(recon)
    except Exception as exc:  # noqa: BLE001
        raise BackendError(f"segmentation failed for mask {index}: {exc}") from exc
    if (seg.height, seg.width) != (image.height, image.width):
        raise BackendDimensionError(
            f"segmenter returned {seg.height}x{seg.width} for mask {index}, "
            f"expected {image.height}x{image.width}"
        )
    return seg


def build_segmentation_set(
    image: ImageGrid, ms: MaskSet, g: DemaskingBackend, f: SegmentationBackend
) -> SegSet:
    """Demask and segment the image once per mask; entries follow mask order.

    The K jobs are dispatched concurrently when both backends accept more
    than one in-flight request; results are re-ordered by mask index, so the
    output does not depend on completion order.
    """
    parallel = min(g.max_inflight, f.max_inflight, ms.k)
    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            futures = [
                pool.submit(_run_one, image, m, g, f, i)
                for i, m in enumerate(ms.masks)
            ]
            entries = [fut.result() for fut in futures]
    else:
        entries = [_run_one(image, m, g, f, i) for i, m in enumerate(ms.masks)]
    return SegSet(entries)


# ------------------------------------------------------------- toy demasker


class NearestFillDemasker(DemaskingBackend):
    """Fills each masked pixel with the nearest visible pixel's value
    (Euclidean distance, ties broken by row-major order of the visible
    pixels). A fully masked input becomes mid-gray.

    Quadratic in the pixel count, intended for desk-scale images. The
    nearest-index map depends only on the mask, so it is cached per mask.
    """

    name = "nearest-fill-v1"

    def __init__(self, fill_value: float = 0.5, cache_size: int = 64):
        self.fill_value = fill_value
        self._cache: dict[bytes, np.ndarray | None] = {}
        self._cache_size = cache_size

    def _index_map(self, visible: np.ndarray) -> np.ndarray | None:
        """Flat index of the nearest visible pixel for every pixel, or None
        when nothing is visible."""
        key = visible.tobytes()
        if key in self._cache:
            return self._cache[key]
        h, w = visible.shape
        vis_idx = np.flatnonzero(visible)  # row-major order
        if vis_idx.size == 0:
            result = None
        else:
            vy, vx = np.divmod(vis_idx, w)
            yy, xx = np.mgrid[0:h, 0:w]
            result = np.empty(h * w, dtype=np.int64)
            # Chunk target pixels to bound the distance matrix size.
            flat_y, flat_x = yy.ravel(), xx.ravel()
            chunk = max(1, int(4_000_000 // max(1, vis_idx.size)))
            for start in range(0, h * w, chunk):
                sl = slice(start, start + chunk)
                d2 = (flat_y[sl, None] - vy[None, :]) ** 2 + (
                    flat_x[sl, None] - vx[None, :]
                ) ** 2
                # argmin returns the first minimum: row-major tie-break.
                result[sl] = vis_idx[np.argmin(d2, axis=1)]
        if len(self._cache) >= self._cache_size:
            self._cache.clear()
        self._cache[key] = result
        return result

    def demask(self, masked: MaskedImage) -> ImageGrid:
        image, mask = masked
        idx = self._index_map(mask.visible)
        if idx is None:
            out = np.full(image.data.shape, self.fill_value, dtype=np.float32)
            return ImageGrid._wrap(out)
        h, w, c = image.data.shape
        flat = image.data.reshape(h * w, c)
        out = flat[idx].reshape(h, w, c).copy()
        return ImageGrid._wrap(out)


def toy_nearest_fill_demasker() -> NearestFillDemasker:
    return NearestFillDemasker()


# ------------------------------------------------------------ toy segmenters


class DominantChannelSegmenter(SegmentationBackend):
    """Class = index of the strongest channel (ties to the lower index).

    On RGB that is the red/green/blue -> 0/1/2 rule; pure per-pixel, so it is
    trivially a function of its input image.
    """

    name = "dominant-channel-v1"

    def __init__(self, num_classes: int | None = None):
        self._declared = num_classes

    @property
    def num_classes(self) -> int:
        return self._declared or 3

    def segment(self, image: ImageGrid) -> SegMap:
        n = self._declared or image.channels
        labels = np.argmax(image.data, axis=2).astype(np.int32)
        labels = np.minimum(labels, n - 1)
        return SegMap._wrap(labels, n)


class QuantizeSegmenter(SegmentationBackend):
    """Class = quantized mean intensity. Sensitive to any intensity change,
    which makes it a convenient toy victim for patch attacks."""

    name = "quantize-v1"

    def __init__(self, num_classes: int = 4):
        self.num_classes = num_classes

    def segment(self, image: ImageGrid) -> SegMap:
        mean = image.data.mean(axis=2)
        labels = np.clip(
            (mean * self.num_classes).astype(np.int32), 0, self.num_classes - 1
        )
        return SegMap._wrap(labels, self.num_classes)


class LookupSegmenter(SegmentationBackend):
    """Answers from a fingerprint -> SegMap library; rejects unknown images."""

    name = "lookup-v1"

    def __init__(self, library: dict[str, SegMap]):
        if not library:
            raise BackendError("lookup segmenter needs a non-empty library")
        self.library = library
        self.num_classes = next(iter(library.values())).num_classes

    @staticmethod
    def fingerprint(image: ImageGrid) -> str:
        return hashlib.sha256(image.to_u8().tobytes()).hexdigest()

    def segment(self, image: ImageGrid) -> SegMap:
        key = self.fingerprint(image)
        try:
            return self.library[key]
        except KeyError:
            raise UnsupportedImageError(
                f"no segmentation known for image {key[:12]}..."
            ) from None


def toy_oracle_segmenter(
    library: dict[str, SegMap] | None = None, num_classes: int | None = None
) -> SegmentationBackend:
    """Rule-based segmenter for synthetic scenes, or a strict lookup backend
    when a fingerprint library is supplied."""
    if library is not None:
        return LookupSegmenter(library)
    return DominantChannelSegmenter(num_classes)
