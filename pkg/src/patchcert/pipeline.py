"""Path-level jobs shared by the HTTP service and the CLI: mask generation,
certification (single image or batch), dataset evaluation, and audits.

Every job reads and writes ordinary files (PNG / PGM / JSON) so results can
be inspected or diffed; all writes are atomic and byte-stable for identical
inputs, flags and seed.
"""

from __future__ import annotations

import math
import shlex
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import imageio
from .backends import (
    DominantChannelSegmenter,
    QuantizeSegmenter,
    toy_nearest_fill_demasker,
)
from .certify import (
    CertifiedOutput,
    certify_detection,
    certify_recovery,
    save_certified_output,
)
from .errors import GeometryError, PatchCertError
from .grid import ThreatModel
from .maskgen import (
    build_maskset,
    compute_strength,
    load_maskset,
    save_maskset,
    verify_block_uniqueness,
    verify_detection_coverage,
)
from .metrics import DatasetAggregate
from .oracle import (
    attack_search,
    audit_detection_soundness,
    audit_masking_erasure,
    audit_recovery_soundness,
)
from .process_backend import external_process_backend
from .scenes import color_band_scene


def patch_geometry(
    height: int,
    width: int,
    patch_frac: float | None = None,
    patch_h: int | None = None,
    patch_w: int | None = None,
) -> tuple[int, int]:
    """Resolve the declared patch size. An area fraction maps to a square
    patch with side ceil(sqrt(frac * H * W))."""
    if patch_frac is not None:
        if patch_h is not None or patch_w is not None:
            raise GeometryError("give either --patch-frac or --patch-h/--patch-w, not both")
        if not 0.0 < patch_frac <= 1.0:
            raise GeometryError(f"patch fraction must be in (0, 1], got {patch_frac}")
        side = math.ceil(math.sqrt(patch_frac * height * width))
        return side, side
    if patch_h is None or patch_w is None:
        raise GeometryError("patch size required: --patch-frac or both --patch-h and --patch-w")
    return patch_h, patch_w


def run_gen_masks(
    height: int,
    width: int,
    scheme: str,
    out_dir,
    k: int | None = None,
    patch_frac: float | None = None,
    patch_h: int | None = None,
    patch_w: int | None = None,
    mask_width: int | None = None,
) -> dict:
    ph, pw = patch_geometry(height, width, patch_frac, patch_h, patch_w)
    tm = ThreatModel(ph, pw, height, width)
    ms = build_maskset(scheme, tm, k=k, detection_extent=mask_width)
    info = {
        "scheme": ms.scheme,
        "kind": ms.kind,
        "k": ms.k,
        "patch_height": ph,
        "patch_width": pw,
        "out_dir": str(out_dir),
        "notes": list(ms.notes),
    }
    if ms.kind == "recovery":
        info["declared_strength"] = ms.declared_strength
        info["computed_strength"] = compute_strength(ms)
        info["block_uniqueness"] = verify_block_uniqueness(ms)
    else:
        info["coverage_verified"] = verify_detection_coverage(ms)
        info["detection_extent"] = ms.detection_extent
    save_maskset(ms, out_dir)
    return info


@contextmanager
def open_backends(backend_spec: str, channels: int):
    """Yield (demasker, segmenter) for a backend spec.

    ``toy`` wires the nearest-fill demasker to the dominant-channel rule
    (RGB) or intensity quantization (grayscale). ``process:<command>``
    spawns a wire-protocol child process.
    """
    if backend_spec == "toy":
        g = toy_nearest_fill_demasker()
        f = DominantChannelSegmenter(3) if channels >= 3 else QuantizeSegmenter(4)
        yield g, f
        return
    if backend_spec.startswith("process:"):
        command = shlex.split(backend_spec[len("process:"):])
        if not command:
            raise GeometryError("empty process backend command")
        g, f = external_process_backend(command)
        try:
            yield g, f
        finally:
            g.client.close()
        return
    raise GeometryError(f"unknown backend spec {backend_spec!r} (use 'toy' or 'process:<cmd>')")


def _certify_single(image_path, ms, mode, g, f, n_patches, out_dir, colorize,
                    allow_nondeterministic=False) -> dict:
    image = imageio.read_png(image_path)
    if (image.height, image.width) != (ms.threat.image_height, ms.threat.image_width):
        raise GeometryError(
            f"{image_path}: image is {image.height}x{image.width} but the mask set "
            f"was built for {ms.threat.image_height}x{ms.threat.image_width}"
        )
    if mode == "recovery":
        out = certify_recovery(image, ms, g, f, num_patches=n_patches)
    elif mode == "detection":
        out = certify_detection(image, ms, g, f,
                                allow_nondeterministic=allow_nondeterministic)
    else:
        raise GeometryError(f"unknown mode {mode!r}")
    save_certified_output(out, out_dir, colorize=colorize)
    return {
        "image": str(image_path),
        "out_dir": str(out_dir),
        "mode": mode,
        "certified_fraction": out.certified_fraction,
    }


def run_certify(
    image,
    masks_dir,
    mode: str,
    backend: str = "toy",
    n_patches: int = 1,
    out_dir=None,
    colorize: bool = False,
    jobs: int = 1,
    allow_nondeterministic: bool = False,
) -> dict:
    """Certify one PNG, or every PNG under a directory (mirrored output
    layout, one worker per image up to ``jobs``)."""
    image = Path(image)
    out_dir = Path(out_dir)
    ms = load_maskset(masks_dir)
    if ms.kind == "detection":
        verify_detection_coverage(ms)

    if image.is_dir():
        paths = sorted(p for p in image.rglob("*.png"))
        if not paths:
            raise GeometryError(f"no PNG images under {image}")
        first = imageio.read_png(paths[0])
        results = []
        with open_backends(backend, first.channels) as (g, f):
            def one(p):
                rel = p.relative_to(image)
                return _certify_single(
                    p, ms, mode, g, f, n_patches, out_dir / rel.with_suffix(""),
                    colorize, allow_nondeterministic,
                )

            if jobs > 1:
                with ThreadPoolExecutor(max_workers=jobs) as pool:
                    results = list(pool.map(one, paths))
            else:
                results = [one(p) for p in paths]
        return {"images": results, "count": len(results)}

    probe = imageio.read_png(image)
    with open_backends(backend, probe.channels) as (g, f):
        info = _certify_single(image, ms, mode, g, f, n_patches, out_dir, colorize,
                               allow_nondeterministic)
    return {"images": [info], "count": 1}


def _collect_maps(directory: Path, suffixes=(".pgm", ".seg")) -> dict[str, Path]:
    """Map stem -> file, accepting flat files or per-image subdirectories."""
    directory = Path(directory)
    found: dict[str, Path] = {}
    for p in sorted(directory.rglob("*")):
        if p.is_file() and p.suffix in suffixes:
            if p.name.startswith(("segmentation", "cert_map")):
                stem = p.parent.relative_to(directory).as_posix()
            else:
                stem = p.relative_to(directory).with_suffix("").as_posix()
            found.setdefault(stem, p)
    return found


def run_eval(
    pred_dir,
    gt_dir,
    num_classes: int,
    cert_dir=None,
    big_threshold: float = 0.20,
    ignore_label: int | None = None,
    out_path=None,
) -> dict:
    """Aggregate certification metrics over matched filename pairs."""
    preds = _collect_maps(Path(pred_dir))
    gts = {
        p.relative_to(gt_dir).with_suffix("").as_posix(): p
        for p in sorted(Path(gt_dir).rglob("*"))
        if p.is_file() and p.suffix in (".pgm", ".seg")
    }
    certs: dict[str, Path] = {}
    if cert_dir is not None:
        for p in sorted(Path(cert_dir).rglob("cert_map.pgm")):
            certs[p.parent.relative_to(cert_dir).as_posix()] = p
        for p in sorted(Path(cert_dir).rglob("*.pgm")):
            if p.name != "cert_map.pgm" and not p.name.startswith("segmentation"):
                certs.setdefault(p.relative_to(cert_dir).with_suffix("").as_posix(), p)
    if not preds:
        raise GeometryError(f"no prediction maps under {pred_dir}")
    missing = sorted(set(preds) - set(gts)) + sorted(set(gts) - set(preds))
    if missing:
        raise GeometryError(f"unmatched prediction/ground-truth files: {missing[:8]}")

    agg = DatasetAggregate(num_classes, ignore_label)
    for stem in sorted(preds):
        pred = imageio.read_segmap(preds[stem], num_classes)
        gt = imageio.read_segmap(gts[stem], num_classes, ignore_label)
        if stem in certs:
            cert_map = imageio.read_pgm(certs[stem]) == 255
        else:
            cert_map = np.zeros(pred.labels.shape, dtype=bool)
        agg.add_image(stem, CertifiedOutput(pred, cert_map, "eval"), gt)
    report = agg.report(big_threshold)
    if out_path is not None:
        imageio.write_json(out_path, report)
    return report


def run_audit(
    masks_dir,
    image_path=None,
    out_path=None,
    seed: int = 0,
    num_random: int = 8,
    soundness_random: int = 4,
    attack_budget: int = 0,
    n_patches: int = 1,
) -> dict:
    """Masking-erasure plus the matching soundness audit for a stored mask
    set, on a supplied image or a deterministic synthetic scene."""
    ms = load_maskset(masks_dir)
    tm = ms.threat
    if image_path is not None:
        image = imageio.read_png(image_path)
        if (image.height, image.width) != (tm.image_height, tm.image_width):
            raise GeometryError("audit image does not match mask set dimensions")
    else:
        image, _ = color_band_scene(
            tm.image_height, tm.image_width, "h" if ms.scheme != "row" else "v",
            bands=2, seed=seed,
        )

    erasure = audit_masking_erasure(image, ms, tm, num_random=num_random, seed=seed)
    g = toy_nearest_fill_demasker()
    f = DominantChannelSegmenter(3)
    if ms.kind == "recovery":
        soundness = audit_recovery_soundness(
            image, ms, g, f, num_random=soundness_random, seed=seed, num_patches=n_patches
        )
    else:
        soundness = audit_detection_soundness(
            image, ms, g, f, num_random=soundness_random, seed=seed
        )
    report = {
        "scheme": ms.scheme,
        "kind": ms.kind,
        "seed": seed,
        "erasure": erasure.to_json(),
        "soundness": soundness.to_json(),
        "ok": erasure.ok and soundness.ok,
    }
    if attack_budget > 0:
        gt = f.segment(image)
        found = attack_search(image, gt, f, tm, budget=attack_budget, seed=seed)
        report["attack_search"] = {
            "budget": attack_budget,
            "clean_quality": found.clean_quality,
            "worst_quality": found.quality,
            "loc": [found.location.top, found.location.left,
                    found.location.height, found.location.width],
        }
    if out_path is not None:
        imageio.write_json(out_path, report)
    # timing goes to the caller, never into the byte-stable audit file
    report = dict(report)
    report["wall_time_s"] = erasure.wall_time_s + soundness.wall_time_s
    return report


def error_code(exc: Exception) -> str:
    """Classify an engine exception for exit codes and HTTP statuses."""
    from .errors import (
        BackendError,
        CoverageError,
        InsufficientMasksError,
        MaskConstructionError,
    )

    if isinstance(exc, (MaskConstructionError, CoverageError, InsufficientMasksError)):
        return "verification"
    if isinstance(exc, BackendError):
        return "backend"
    if isinstance(exc, (PatchCertError, FileNotFoundError, NotADirectoryError, ValueError)):
        return "usage"
    return "internal"
