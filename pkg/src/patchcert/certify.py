"""Pixel-wise certification.

Recovery: majority vote over the K demasked segmentations; a pixel is
certified when all K votes agree, which pins its label under any N
simultaneous patches provided K >= 2NT + 1 (T = mask-set strength).

Detection: the model's own output is kept unchanged and a pixel is
verified when that output agrees with all K demasked segmentations; any
patch-induced change at a verified pixel is then guaranteed to be flagged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imageio
from .backends import DemaskingBackend, SegmentationBackend, SegSet, build_segmentation_set
from .errors import (
    BackendError,
    CoverageError,
    DimensionMismatchError,
    GeometryError,
    InsufficientMasksError,
)
from .grid import ImageGrid, SegMap
from .maskgen import MaskSet, verify_detection_coverage


@dataclass
class CertifiedOutput:
    """A segmentation plus the per-pixel certified / uncertified map."""

    segmentation: SegMap
    cert_map: np.ndarray  # bool HxW
    mode: str  # "recovery" | "detection"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cert_map = np.asarray(self.cert_map, dtype=bool)
        if self.cert_map.shape != self.segmentation.labels.shape:
            raise DimensionMismatchError("cert map does not match segmentation size")

    @property
    def certified_fraction(self) -> float:
        return float(self.cert_map.mean())


def check_recovery_condition(k: int, strength: int, num_patches: int = 1) -> None:
    """Refuse to certify unless K >= 2NT + 1."""
    if k < 1 or strength < 1 or num_patches < 1:
        raise GeometryError("K, T and N must all be >= 1")
    if k < 2 * num_patches * strength + 1:
        raise InsufficientMasksError(k, strength, num_patches)


def recovery_vote(segset: SegSet) -> CertifiedOutput:
    """Per-pixel majority vote, ties to the smaller class index; a pixel is
    certified only when all K votes are identical. The result is invariant
    to the order of the segmentations."""
    stack = segset.stacked()  # (K, H, W)
    num_classes = segset.entries[0].num_classes
    counts = np.zeros((num_classes,) + stack.shape[1:], dtype=np.int32)
    for c in range(num_classes):
        counts[c] = (stack == c).sum(axis=0)
    labels = np.argmax(counts, axis=0).astype(np.int32)  # first max = smallest index
    cert = (stack == stack[0]).all(axis=0)
    seg = SegMap._wrap(labels, num_classes)
    return CertifiedOutput(seg, cert, "recovery", {"k": segset.k})


def detection_verify(base: SegMap, segset: SegSet) -> CertifiedOutput:
    """Verification map: a pixel passes iff the base segmentation agrees with
    every demasked segmentation there. The base output is returned unchanged,
    so clean performance is untouched."""
    stack = segset.stacked()
    if stack.shape[1:] != base.labels.shape:
        raise DimensionMismatchError("segmentation set does not match base size")
    if segset.entries[0].num_classes != base.num_classes:
        raise DimensionMismatchError("segmentation set classes do not match base")
    cert = (stack == base.labels[None, :, :]).all(axis=0)
    return CertifiedOutput(base, cert, "detection", {"k": segset.k})


def certify_recovery(
    image: ImageGrid,
    ms: MaskSet,
    g: DemaskingBackend,
    f: SegmentationBackend,
    num_patches: int = 1,
) -> CertifiedOutput:
    """End-to-end certified recovery: mask, demask, segment, vote."""
    if ms.kind != "recovery":
        raise GeometryError(f"certify_recovery needs a recovery mask set, got {ms.kind}")
    strength = ms.declared_strength
    if strength is None:
        raise GeometryError("recovery mask set has no declared strength")
    check_recovery_condition(ms.k, strength, num_patches)
    segset = build_segmentation_set(image, ms, g, f)
    out = recovery_vote(segset)
    out.meta.update(_meta(ms, g, f, num_patches=num_patches))
    return out


def certify_detection(
    image: ImageGrid,
    ms: MaskSet,
    g: DemaskingBackend,
    f: SegmentationBackend,
    allow_nondeterministic: bool = False,
) -> CertifiedOutput:
    """End-to-end certified detection: the verification map against f(x)."""
    if ms.kind != "detection":
        raise GeometryError(f"certify_detection needs a detection mask set, got {ms.kind}")
    if not (g.deterministic and f.deterministic) and not allow_nondeterministic:
        raise BackendError(
            "detection requires deterministic backends "
            "(pass allow_nondeterministic=True to override)"
        )
    if not ms.coverage_verified and not verify_detection_coverage(ms):
        raise CoverageError("detection mask set does not cover every patch location")
    base = f.segment(image)
    if (base.height, base.width) != (image.height, image.width):
        raise DimensionMismatchError("segmenter output does not match image size")
    segset = build_segmentation_set(image, ms, g, f)
    out = detection_verify(base, segset)
    out.meta.update(_meta(ms, g, f))
    return out


def _meta(ms: MaskSet, g, f, num_patches: int | None = None) -> dict:
    meta = {
        "k": ms.k,
        "scheme": ms.scheme,
        "strength": ms.declared_strength,
        "patch_height": ms.threat.patch_height,
        "patch_width": ms.threat.patch_width,
        "backends": {"demasker": getattr(g, "name", "?"), "segmenter": getattr(f, "name", "?")},
    }
    if num_patches is not None:
        meta["num_patches"] = num_patches
    return meta


# -------------------------------------------------------------- persistence


def save_certified_output(out: CertifiedOutput, directory, colorize: bool = False) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    seg_name = imageio.segmap_filename("segmentation", out.segmentation.num_classes)
    imageio.write_segmap(directory / seg_name, out.segmentation)
    imageio.write_pgm(directory / "cert_map.pgm", np.where(out.cert_map, 255, 0))
    meta = dict(out.meta)
    meta.update(
        {
            "mode": out.mode,
            "num_classes": out.segmentation.num_classes,
            "certified_fraction": out.certified_fraction,
            "segmentation_file": seg_name,
        }
    )
    imageio.write_json(directory / "cert.json", meta)
    if colorize:
        imageio.write_png(
            directory / "segmentation_color.png",
            imageio.colorize_segmap(out.segmentation),
        )
        imageio.write_png(
            directory / "certified_color.png",
            imageio.colorize_segmap(out.segmentation, out.cert_map),
        )


def load_certified_output(directory) -> CertifiedOutput:
    directory = Path(directory)
    meta = imageio.read_json(directory / "cert.json")
    seg = imageio.read_segmap(
        directory / meta["segmentation_file"], meta["num_classes"]
    )
    cert = imageio.read_pgm(directory / "cert_map.pgm") == 255
    mode = meta.pop("mode")
    return CertifiedOutput(seg, cert, mode, meta)
