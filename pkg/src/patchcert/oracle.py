"""Independent brute-force validators.

These never reuse the certifier's reasoning: they enumerate every patch
location (and a battery of patch contents) and re-run the full pipeline on
the patched input, then compare against the issued certificate. A single
violation means an implementation bug, because the guarantees are exact.

Content coverage cannot be exhaustive over all real-valued patches; it does
not need to be. Certified-pixel invariance is content-independent once
masking truly erases content, and *that* structural fact is what
:func:`audit_masking_erasure` checks exhaustively. The content battery
exists to catch coding mistakes, not to re-prove the math.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .backends import build_segmentation_set
from .certify import certify_detection, certify_recovery, detection_verify, recovery_vote
from .grid import (
    ImageGrid,
    PatchLocation,
    SegMap,
    ThreatModel,
    apply_mask,
    apply_patch,
    enumerate_locations,
)
from .maskgen import MaskSet, _window_sums
from .metrics import global_accuracy


@dataclass
class AuditReport:
    audit: str
    scheme: str
    num_locations: int
    battery_size: int
    violations: list = field(default_factory=list)
    wall_time_s: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self, include_timing: bool = False) -> dict:
        # Timing is excluded by default so audit files are byte-stable
        # across identical runs.
        out = {
            "audit": self.audit,
            "scheme": self.scheme,
            "num_locations": self.num_locations,
            "battery_size": self.battery_size,
            "violations": self.violations,
            "ok": self.ok,
        }
        out.update(self.extra)
        if include_timing:
            out["wall_time_s"] = self.wall_time_s
        return out


def _content_battery(image: ImageGrid, num_random: int, seed: int) -> list[tuple[str, ImageGrid]]:
    shape = image.data.shape
    rng = np.random.default_rng(seed)
    battery = [
        ("zeros", ImageGrid._wrap(np.zeros(shape, dtype=np.float32))),
        ("ones", ImageGrid._wrap(np.ones(shape, dtype=np.float32))),
    ]
    for i in range(num_random):
        battery.append(
            (f"random_{i}", ImageGrid._wrap(rng.random(shape, dtype=np.float32)))
        )
    return battery


def _claimed_visible(ms: MaskSet, index: int) -> np.ndarray | None:
    """Visible region mask ``index`` is *supposed* to have, reconstructed
    from the mask set's structural metadata (block assignment for recovery,
    stripe positions for detection). None when no claim is recorded."""
    tm = ms.threat
    h, w = tm.image_height, tm.image_width
    if ms.kind == "recovery" and ms.block_assignment is not None:
        visible = np.zeros((h, w), dtype=bool)
        bh, bw = tm.patch_height, tm.patch_width
        for q, r in np.argwhere(ms.block_assignment == index):
            top, left = int(q) * bh, int(r) * bw
            visible[top : min(top + bh, h), left : min(left + bw, w)] = True
        return visible
    if ms.kind == "detection" and ms.stripe_positions is not None:
        visible = np.ones((h, w), dtype=bool)
        pos = ms.stripe_positions[index]
        if ms.scheme == "det-row":
            visible[pos : pos + ms.detection_extent, :] = False
        else:
            visible[:, pos : pos + ms.detection_extent] = False
        return visible
    return None


def audit_masking_erasure(
    image: ImageGrid, ms: MaskSet, tm: ThreatModel | None = None,
    num_random: int = 1, seed: int = 0,
) -> AuditReport:
    """For every location and every mask covering it, patching then masking
    must equal masking alone, bit-exactly on the 8-bit view, for any patch
    content.

    Which locations a mask covers is derived from the mask set's structural
    claim (block assignment / stripe positions) where available, so a mask
    whose bits leak a pixel inside a region it claims to cover is caught as
    an erasure violation rather than silently shrinking the checked set.
    """
    t0 = time.monotonic()
    tm = tm or ms.threat
    battery = _content_battery(image, num_random, seed)
    baselines = [apply_mask(image, m).image.to_u8() for m in ms.masks]
    covering = []
    for k, m in enumerate(ms.masks):
        claimed = _claimed_visible(ms, k)
        visible = claimed if claimed is not None else m.visible
        covering.append(
            _window_sums(visible, tm.patch_height, tm.patch_width) == 0
        )
    report = AuditReport(
        "masking_erasure", ms.scheme, tm.num_locations, len(battery)
    )
    for loc in enumerate_locations(tm):
        ks = [k for k in range(ms.k) if covering[k][loc.top, loc.left]]
        if not ks:
            continue
        for content_name, content in battery:
            patched = apply_patch(image, content, loc)
            for k in ks:
                got = apply_mask(patched, ms.masks[k]).image.to_u8()
                if not np.array_equal(got, baselines[k]):
                    report.violations.append(
                        {
                            "loc": [loc.top, loc.left, loc.height, loc.width],
                            "mask": k,
                            "content": content_name,
                        }
                    )
    report.wall_time_s = time.monotonic() - t0
    return report


def _two_patch_pairs(locations, num_samples: int, seed: int):
    """Corner pairs, a few adjacent pairs, and seeded random pairs."""
    n = len(locations)
    if n < 2:
        return []
    corners = sorted({0, n - 1, min(n - 1, max(0, n // 2))})
    by_pos = {(loc.top, loc.left): i for i, loc in enumerate(locations)}
    tops = {loc.top for loc in locations}
    lefts = {loc.left for loc in locations}
    corner_pos = [
        (min(tops), min(lefts)), (min(tops), max(lefts)),
        (max(tops), min(lefts)), (max(tops), max(lefts)),
    ]
    corner_idx = sorted({by_pos[p] for p in corner_pos if p in by_pos} | set(corners))
    pairs = set()
    for i in corner_idx:
        for j in corner_idx:
            if i < j:
                pairs.add((i, j))
        # adjacent neighbours (one step right / down) of each anchor
        t, l = locations[i].top, locations[i].left
        for npos in ((t, l + 1), (t + 1, l)):
            if npos in by_pos:
                pairs.add(tuple(sorted((i, by_pos[npos]))))
    rng = np.random.default_rng(seed)
    while len(pairs) < num_samples and n >= 2:
        i, j = rng.integers(0, n, size=2)
        if i != j:
            pairs.add(tuple(sorted((int(i), int(j)))))
    return [(locations[i], locations[j]) for i, j in sorted(pairs)]


def audit_recovery_soundness(
    image: ImageGrid, ms: MaskSet, g, f,
    num_random: int = 100, seed: int = 0,
    num_patches: int = 1, num_pair_samples: int = 48, pair_random: int = 6,
) -> AuditReport:
    """Certify the clean image, then re-run the whole voting pipeline on
    every patched variant and demand the certified pixels never change.

    N=1 is exhaustive over locations; N=2 uses sampled location pairs (plus
    corner and adjacent pairs) since the pair space is quadratic.
    """
    t0 = time.monotonic()
    cert = certify_recovery(image, ms, g, f, num_patches=num_patches)
    base = cert.segmentation.labels
    cert_map = cert.cert_map
    locations = enumerate_locations(ms.threat)

    def recompute(attacked: ImageGrid) -> np.ndarray:
        return recovery_vote(build_segmentation_set(attacked, ms, g, f)).segmentation.labels

    report = AuditReport("recovery_soundness", ms.scheme, len(locations), 0)
    report.extra["num_patches"] = num_patches
    report.extra["certified_fraction"] = cert.certified_fraction
    if num_patches == 1:
        battery = _content_battery(image, num_random, seed)
        report.battery_size = len(battery)
        for loc in locations:
            for content_name, content in battery:
                h_attacked = recompute(apply_patch(image, content, loc))
                bad = cert_map & (h_attacked != base)
                if bad.any():
                    report.violations.append(
                        {
                            "loc": [loc.top, loc.left, loc.height, loc.width],
                            "content": content_name,
                            "pixels": int(bad.sum()),
                        }
                    )
    elif num_patches == 2:
        pairs = _two_patch_pairs(locations, num_pair_samples, seed)
        battery = _content_battery(image, pair_random, seed + 1)
        report.battery_size = len(battery)
        report.extra["num_pairs"] = len(pairs)
        for loc1, loc2 in pairs:
            for i, (name1, c1) in enumerate(battery):
                name2, c2 = battery[(i + 1) % len(battery)]
                attacked = apply_patch(apply_patch(image, c1, loc1), c2, loc2)
                h_attacked = recompute(attacked)
                bad = cert_map & (h_attacked != base)
                if bad.any():
                    report.violations.append(
                        {
                            "locs": [
                                [loc1.top, loc1.left], [loc2.top, loc2.left]
                            ],
                            "contents": [name1, name2],
                            "pixels": int(bad.sum()),
                        }
                    )
    else:
        raise ValueError("soundness audit supports num_patches in {1, 2}")
    report.wall_time_s = time.monotonic() - t0
    return report


def audit_detection_soundness(
    image: ImageGrid, ms: MaskSet, g, f, num_random: int = 100, seed: int = 0
) -> AuditReport:
    """At every pixel verified on both the clean and the patched input, the
    model outputs must agree, for every location and battery content."""
    t0 = time.monotonic()
    cert = certify_detection(image, ms, g, f)
    v_clean = cert.cert_map
    base = cert.segmentation.labels
    battery = _content_battery(image, num_random, seed)
    locations = enumerate_locations(ms.threat)
    report = AuditReport("detection_soundness", ms.scheme, len(locations), len(battery))
    report.extra["certified_fraction"] = cert.certified_fraction
    for loc in locations:
        for content_name, content in battery:
            attacked = apply_patch(image, content, loc)
            base_attacked = f.segment(attacked)
            v_attacked = detection_verify(
                base_attacked, build_segmentation_set(attacked, ms, g, f)
            ).cert_map
            bad = v_clean & v_attacked & (base_attacked.labels != base)
            if bad.any():
                report.violations.append(
                    {
                        "loc": [loc.top, loc.left, loc.height, loc.width],
                        "content": content_name,
                        "pixels": int(bad.sum()),
                    }
                )
    report.wall_time_s = time.monotonic() - t0
    return report


@dataclass
class AttackResult:
    location: PatchLocation
    content: ImageGrid
    quality: float
    clean_quality: float
    trials: int

    @property
    def succeeded(self) -> bool:
        return self.quality < self.clean_quality


def attack_search(
    image: ImageGrid, gt: SegMap, f, tm: ThreatModel,
    budget: int = 200, seed: int = 0,
) -> AttackResult:
    """Gradient-free search for the patch that hurts global accuracy most:
    a coarse location grid plus random locations, with saturated and random
    contents. Reproducible for a fixed seed."""
    rng = np.random.default_rng(seed)
    locations = enumerate_locations(tm)
    shape = image.data.shape
    fixed_contents = [
        np.zeros(shape, dtype=np.float32),
        np.ones(shape, dtype=np.float32),
        np.full(shape, 0.5, dtype=np.float32),
    ]
    if shape[2] >= 3:
        for ch in range(3):
            c = np.zeros(shape, dtype=np.float32)
            c[:, :, ch] = 1.0
            fixed_contents.append(c)

    clean_q = global_accuracy(f.segment(image), gt)
    best = None
    step = max(1, len(locations) // 9)
    proposals = locations[::step]
    for trial in range(budget):
        if trial < len(proposals) * len(fixed_contents):
            loc = proposals[trial % len(proposals)]
            content = fixed_contents[(trial // len(proposals)) % len(fixed_contents)]
        else:
            loc = locations[int(rng.integers(0, len(locations)))]
            content = rng.random(shape, dtype=np.float32)
        content_grid = ImageGrid._wrap(np.ascontiguousarray(content))
        attacked = apply_patch(image, content_grid, loc)
        q = global_accuracy(f.segment(attacked), gt)
        if best is None or q < best.quality:
            best = AttackResult(loc, content_grid, q, clean_q, budget)
    return best
