"""Certified recovery and certified detection for semantic segmentation
under adversarial patch attacks, via mask sets, demasking, and pixel-wise
vote aggregation."""

from .grid import (
    ImageGrid,
    MaskGrid,
    MaskedImage,
    PatchLocation,
    SegMap,
    ThreatModel,
    apply_mask,
    apply_patch,
    covers,
    enumerate_locations,
)
from .maskgen import (
    BlockPartition,
    MaskSet,
    build_3mask,
    build_4mask,
    build_column_masks,
    build_detection_column_masks,
    build_detection_row_masks,
    build_maskset,
    build_row_masks,
    compute_strength,
    load_maskset,
    save_maskset,
    verify_block_uniqueness,
    verify_detection_coverage,
)
from .backends import (
    DemaskingBackend,
    SegmentationBackend,
    SegSet,
    build_segmentation_set,
    toy_nearest_fill_demasker,
    toy_oracle_segmenter,
)
from .certify import (
    CertifiedOutput,
    certify_detection,
    certify_recovery,
    check_recovery_condition,
    detection_verify,
    recovery_vote,
)
from .process_backend import external_process_backend

__version__ = "0.1.0"

__all__ = [
    "ImageGrid",
    "MaskGrid",
    "MaskedImage",
    "PatchLocation",
    "SegMap",
    "ThreatModel",
    "apply_mask",
    "apply_patch",
    "covers",
    "enumerate_locations",
    "BlockPartition",
    "MaskSet",
    "build_3mask",
    "build_4mask",
    "build_column_masks",
    "build_detection_column_masks",
    "build_detection_row_masks",
    "build_maskset",
    "build_row_masks",
    "compute_strength",
    "load_maskset",
    "save_maskset",
    "verify_block_uniqueness",
    "verify_detection_coverage",
    "DemaskingBackend",
    "SegmentationBackend",
    "SegSet",
    "build_segmentation_set",
    "toy_nearest_fill_demasker",
    "toy_oracle_segmenter",
    "CertifiedOutput",
    "certify_detection",
    "certify_recovery",
    "check_recovery_condition",
    "detection_verify",
    "recovery_vote",
    "external_process_backend",
    "__version__",
]
