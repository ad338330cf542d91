"""Mask-set construction and structural verification.

Recovery sets (column, row, 3-mask, 4-mask) partition the image into
patch-sized blocks and make each block visible in exactly one mask; their
*strength* T is the largest number of masks any single patch placement can
leave uncovered. Detection sets (full or strided column/row) guarantee that
every patch location is fully covered by at least one mask.

Every builder re-checks its own guarantee by exhaustive enumeration over
all patch locations and refuses to emit an unsound set.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imageio
from .errors import CoverageError, GeometryError, MaskConstructionError
from .grid import MaskGrid, PatchLocation, ThreatModel

BUILDER_VERSION = 1

RECOVERY_SCHEMES = ("column", "row", "3mask", "4mask")
DETECTION_SCHEMES = ("det-col", "det-row")


@dataclass(frozen=True)
class BlockPartition:
    """Tiling of an image into patch-sized blocks, edge blocks truncated."""

    image_height: int
    image_width: int
    block_height: int
    block_width: int

    def __post_init__(self):
        if self.block_height < 1 or self.block_width < 1:
            raise GeometryError("block dimensions must be >= 1")
        if self.block_height > self.image_height or self.block_width > self.image_width:
            raise GeometryError(
                f"block {self.block_height}x{self.block_width} larger than image "
                f"{self.image_height}x{self.image_width}"
            )

    @property
    def rows(self) -> int:
        return -(-self.image_height // self.block_height)

    @property
    def cols(self) -> int:
        return -(-self.image_width // self.block_width)

    def block_bounds(self, q: int, r: int) -> tuple[int, int, int, int]:
        """(top, left, height, width) of block (q, r), truncated at the edges."""
        top = q * self.block_height
        left = r * self.block_width
        h = min(self.block_height, self.image_height - top)
        w = min(self.block_width, self.image_width - left)
        return top, left, h, w

    def transposed(self) -> "BlockPartition":
        return BlockPartition(
            self.image_width, self.image_height, self.block_width, self.block_height
        )


@dataclass
class MaskSet:
    """An ordered family of masks plus the metadata its guarantees rest on."""

    masks: list[MaskGrid]
    kind: str  # "recovery" | "detection"
    scheme: str
    threat: ThreatModel
    declared_strength: int | None = None
    block_assignment: np.ndarray | None = None  # (rows, cols) -> mask index
    detection_extent: int | None = None  # W'' (det-col) or H'' (det-row)
    stripe_positions: tuple[int, ...] | None = None  # per-mask stripe origin
    notes: tuple[str, ...] = ()
    builder_version: int = BUILDER_VERSION
    coverage_verified: bool = field(default=False, compare=False)

    @property
    def k(self) -> int:
        return len(self.masks)


def _window_sums(visible: np.ndarray, h: int, w: int) -> np.ndarray:
    """Count of visible pixels inside every h x w window (integral image)."""
    H, W = visible.shape
    integ = np.zeros((H + 1, W + 1), dtype=np.int64)
    integ[1:, 1:] = visible.astype(np.int64).cumsum(axis=0).cumsum(axis=1)
    return integ[h:, w:] - integ[:-h, w:] - integ[h:, :-w] + integ[:-h, :-w]


def _affected_map(mask: MaskGrid, tm: ThreatModel) -> np.ndarray:
    """Boolean (H-H'+1, W-W'+1) grid: does a patch at (t, l) touch visible pixels?"""
    return _window_sums(mask.visible, tm.patch_height, tm.patch_width) > 0


def compute_strength(ms: MaskSet, tm: ThreatModel | None = None) -> int:
    """Exact T(M): max over all patch locations of the number of masks the
    patch leaves uncovered, by exhaustive enumeration."""
    tm = tm or ms.threat
    total = _strength_per_location(ms, tm)
    return int(total.max())


def _strength_per_location(ms: MaskSet, tm: ThreatModel) -> np.ndarray:
    total = np.zeros(
        (
            tm.image_height - tm.patch_height + 1,
            tm.image_width - tm.patch_width + 1,
        ),
        dtype=np.int64,
    )
    for mask in ms.masks:
        total += _affected_map(mask, tm)
    return total


def verify_detection_coverage(ms: MaskSet, tm: ThreatModel | None = None) -> bool:
    """True iff every patch location is fully covered by at least one mask."""
    tm = tm or ms.threat
    covered = None
    for mask in ms.masks:
        this = _window_sums(mask.visible, tm.patch_height, tm.patch_width) == 0
        covered = this if covered is None else (covered | this)
    ok = covered is not None and bool(covered.all())
    if ok:
        ms.coverage_verified = True
    return ok


def first_coverage_gap(ms: MaskSet, tm: ThreatModel | None = None) -> PatchLocation | None:
    """First (row-major) patch location no mask covers, or None."""
    tm = tm or ms.threat
    covered = np.zeros(
        (tm.image_height - tm.patch_height + 1, tm.image_width - tm.patch_width + 1),
        dtype=bool,
    )
    for mask in ms.masks:
        covered |= _window_sums(mask.visible, tm.patch_height, tm.patch_width) == 0
    if covered.all():
        return None
    t, l = np.argwhere(~covered)[0]
    return PatchLocation(int(t), int(l), tm.patch_height, tm.patch_width)


def verify_block_uniqueness(ms: MaskSet) -> bool:
    """Every block fully visible in exactly its assigned mask, fully masked in
    all others. Vacuously true only when there are no blocks."""
    if ms.block_assignment is None:
        return False
    part = BlockPartition(
        ms.threat.image_height,
        ms.threat.image_width,
        ms.threat.patch_height,
        ms.threat.patch_width,
    )
    assign = ms.block_assignment
    for q in range(part.rows):
        for r in range(part.cols):
            top, left, h, w = part.block_bounds(q, r)
            owner = int(assign[q, r])
            if owner >= len(ms.masks):
                return False
            for k, mask in enumerate(ms.masks):
                block = mask.visible[top : top + h, left : left + w]
                if k == owner:
                    if not block.all():
                        return False
                elif block.any():
                    return False
    return True


# --------------------------------------------------------- recovery builders


def _masks_from_assignment(
    part: BlockPartition, k: int, assignment: np.ndarray
) -> tuple[list[MaskGrid], tuple[str, ...]]:
    notes = []
    masks = []
    for idx in range(k):
        visible = np.zeros((part.image_height, part.image_width), dtype=bool)
        blocks = np.argwhere(assignment == idx)
        if blocks.size == 0:
            note = f"mask {idx} has no visible blocks (image too small for K={k})"
            warnings.warn(note, RuntimeWarning, stacklevel=3)
            notes.append(note)
        for q, r in blocks:
            top, left, h, w = part.block_bounds(int(q), int(r))
            visible[top : top + h, left : left + w] = True
        masks.append(MaskGrid._wrap(visible))
    return masks, tuple(notes)


def _finish_recovery(
    part: BlockPartition, k: int, assignment: np.ndarray, scheme: str, declared: int
) -> MaskSet:
    masks, notes = _masks_from_assignment(part, k, assignment)
    tm = ThreatModel(
        part.block_height, part.block_width, part.image_height, part.image_width
    )
    ms = MaskSet(
        masks=masks,
        kind="recovery",
        scheme=scheme,
        threat=tm,
        declared_strength=declared,
        block_assignment=assignment,
        notes=notes,
    )
    strength = compute_strength(ms, tm)
    if strength > declared:
        per_loc = _strength_per_location(ms, tm)
        t, l = np.unravel_index(int(per_loc.argmax()), per_loc.shape)
        raise MaskConstructionError(
            f"{scheme} masks on {part.image_height}x{part.image_width} image, "
            f"{part.block_height}x{part.block_width} blocks, K={k}: computed "
            f"strength {strength} exceeds declared {declared} "
            f"(offending patch location top={t}, left={l})"
        )
    return ms


def build_column_masks(partition: BlockPartition, k: int) -> MaskSet:
    """Mask i reveals the block columns congruent to i mod K; a patch can
    straddle at most two adjacent columns, so the strength is 2."""
    if k < 2:
        raise GeometryError(f"column masks need K >= 2, got {k}")
    cols = np.arange(partition.cols) % k
    assignment = np.broadcast_to(cols, (partition.rows, partition.cols)).copy()
    return _finish_recovery(partition, k, assignment, "column", declared=2)


def build_row_masks(partition: BlockPartition, k: int) -> MaskSet:
    """Transpose of the column scheme."""
    if k < 2:
        raise GeometryError(f"row masks need K >= 2, got {k}")
    rows = np.arange(partition.rows) % k
    assignment = np.broadcast_to(rows[:, None], (partition.rows, partition.cols)).copy()
    return _finish_recovery(partition, k, assignment, "row", declared=2)


def build_3mask(partition: BlockPartition, k: int) -> MaskSet:
    """Parity-alternating pairing: odd block rows go (single, pair, pair, ...),
    even rows go (pair, pair, ...), the running mask index wraps modulo K.
    In any 2x2 block window either the top or the bottom pair then shares a
    mask, so a patch can affect at most 3 masks.

    The wrap-around can in principle break the pairing at seams, so the
    computed strength is re-checked and construction fails rather than
    emitting an unsound set.
    """
    if k < 2:
        raise GeometryError(f"3-mask needs K >= 2, got {k}")
    assignment = np.zeros((partition.rows, partition.cols), dtype=np.int64)
    value = 0
    for q in range(partition.rows):
        pos = 0
        first_group = 1 if q % 2 == 0 else 2
        group = first_group
        while pos < partition.cols:
            take = min(group, partition.cols - pos)
            assignment[q, pos : pos + take] = value
            pos += take
            value = (value + 1) % k
            group = 2
    return _finish_recovery(partition, k, assignment, "3mask", declared=3)


def build_4mask(partition: BlockPartition, k: int) -> MaskSet:
    """Uniformly spread blocks. K=9 tiles a 3x3 index pattern; other K fall
    back to row-major cyclic assignment. A patch intersects at most four
    blocks, so any block-unique assignment has strength <= 4."""
    if k < 2:
        raise GeometryError(f"4-mask needs K >= 2, got {k}")
    q = np.arange(partition.rows)[:, None]
    r = np.arange(partition.cols)[None, :]
    if k == 9:
        assignment = (q % 3) * 3 + (r % 3)
    else:
        assignment = (q * partition.cols + r) % k
    return _finish_recovery(partition, k, assignment.astype(np.int64), "4mask", declared=4)


# -------------------------------------------------------- detection builders


def _stride_positions(extent: int, patch_extent: int, image_extent: int) -> list[int]:
    stride = extent - patch_extent + 1
    last = image_extent - extent
    positions = []
    pos = 0
    while pos < last:
        positions.append(pos)
        pos += stride
    positions.append(last)
    return positions


def build_detection_column_masks(tm: ThreatModel, mask_width: int) -> MaskSet:
    """Masks hiding full-height columns of width W'' >= W' at stride
    W'' - W' + 1, the last one flush with the right edge. Coverage of every
    patch location is re-verified rather than trusted."""
    if mask_width < tm.patch_width:
        raise GeometryError(
            f"detection mask width {mask_width} < patch width {tm.patch_width}"
        )
    if mask_width > tm.image_width:
        raise GeometryError(
            f"detection mask width {mask_width} > image width {tm.image_width}"
        )
    masks = []
    positions = _stride_positions(mask_width, tm.patch_width, tm.image_width)
    for pos in positions:
        visible = np.ones((tm.image_height, tm.image_width), dtype=bool)
        visible[:, pos : pos + mask_width] = False
        masks.append(MaskGrid._wrap(visible))
    ms = MaskSet(
        masks=masks,
        kind="detection",
        scheme="det-col",
        threat=tm,
        detection_extent=mask_width,
        stripe_positions=tuple(positions),
    )
    if not verify_detection_coverage(ms, tm):
        gap = first_coverage_gap(ms, tm)
        raise CoverageError(f"det-col masks leave location {gap} uncovered")
    return ms


def build_detection_row_masks(tm: ThreatModel, mask_height: int) -> MaskSet:
    """Transpose of the strided-column scheme."""
    if mask_height < tm.patch_height:
        raise GeometryError(
            f"detection mask height {mask_height} < patch height {tm.patch_height}"
        )
    if mask_height > tm.image_height:
        raise GeometryError(
            f"detection mask height {mask_height} > image height {tm.image_height}"
        )
    masks = []
    positions = _stride_positions(mask_height, tm.patch_height, tm.image_height)
    for pos in positions:
        visible = np.ones((tm.image_height, tm.image_width), dtype=bool)
        visible[pos : pos + mask_height, :] = False
        masks.append(MaskGrid._wrap(visible))
    ms = MaskSet(
        masks=masks,
        kind="detection",
        scheme="det-row",
        threat=tm,
        detection_extent=mask_height,
        stripe_positions=tuple(positions),
    )
    if not verify_detection_coverage(ms, tm):
        gap = first_coverage_gap(ms, tm)
        raise CoverageError(f"det-row masks leave location {gap} uncovered")
    return ms


def build_maskset(scheme: str, tm: ThreatModel, k: int | None = None,
                  detection_extent: int | None = None) -> MaskSet:
    """Dispatch by scheme name (the CLI / service entry point)."""
    if scheme in RECOVERY_SCHEMES:
        if k is None:
            k = {"column": 5, "row": 5, "3mask": 7, "4mask": 9}[scheme]
        part = BlockPartition(
            tm.image_height, tm.image_width, tm.patch_height, tm.patch_width
        )
        builder = {
            "column": build_column_masks,
            "row": build_row_masks,
            "3mask": build_3mask,
            "4mask": build_4mask,
        }[scheme]
        return builder(part, k)
    if scheme == "det-col":
        return build_detection_column_masks(tm, detection_extent or tm.patch_width)
    if scheme == "det-row":
        return build_detection_row_masks(tm, detection_extent or tm.patch_height)
    raise GeometryError(f"unknown mask scheme {scheme!r}")


# -------------------------------------------------------------- persistence


def save_maskset(ms: MaskSet, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, mask in enumerate(ms.masks):
        imageio.write_mask(directory / f"mask_{i:03d}.pgm", mask)
    meta = {
        "kind": ms.kind,
        "scheme": ms.scheme,
        "k": ms.k,
        "strength": ms.declared_strength,
        "patch_height": ms.threat.patch_height,
        "patch_width": ms.threat.patch_width,
        "image_height": ms.threat.image_height,
        "image_width": ms.threat.image_width,
        "block_assignment": (
            ms.block_assignment.tolist() if ms.block_assignment is not None else None
        ),
        "detection_extent": ms.detection_extent,
        "stripe_positions": (
            list(ms.stripe_positions) if ms.stripe_positions is not None else None
        ),
        "builder": ms.scheme,
        "builder_version": ms.builder_version,
        "notes": list(ms.notes),
    }
    imageio.write_json(directory / "maskset.json", meta)


def load_maskset(directory) -> MaskSet:
    directory = Path(directory)
    meta = imageio.read_json(directory / "maskset.json")
    masks = [
        imageio.read_mask(directory / f"mask_{i:03d}.pgm") for i in range(meta["k"])
    ]
    tm = ThreatModel(
        meta["patch_height"],
        meta["patch_width"],
        meta["image_height"],
        meta["image_width"],
    )
    assignment = meta.get("block_assignment")
    stripes = meta.get("stripe_positions")
    return MaskSet(
        masks=masks,
        kind=meta["kind"],
        scheme=meta["scheme"],
        threat=tm,
        declared_strength=meta.get("strength"),
        block_assignment=np.asarray(assignment, dtype=np.int64) if assignment else None,
        detection_extent=meta.get("detection_extent"),
        stripe_positions=tuple(stripes) if stripes else None,
        notes=tuple(meta.get("notes", ())),
        builder_version=meta.get("builder_version", BUILDER_VERSION),
        coverage_verified=False,
    )
