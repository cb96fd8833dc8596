"""Synthetic occlusion masks: eight parametric families plus batch application.

Masks are boolean rasters (True = occluded) generated from normalized
unit-square geometry evaluated at pixel centers, so every family scales
consistently across resolutions. The families:

  1  one eye (left or right drawn at random)
  2  nose
  3  lower face (surgical-mask region)
  4  top band through both eyes and hair
  5  one full half of the face (side drawn at random)
  6  45-degree stripe pattern (heavy watermark)
  7  everything outside the face ellipse (background only)
  8  everything inside the face ellipse

Kinds 7 and 8 are exact bitwise complements; the sided kinds (1, 5) produce
exact horizontal mirror images of each other because the "right" raster is
the flipped "left" raster, never a separately evaluated predicate.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import codec
from .dataset import DatasetManifest, Sample, save_manifest
from .errors import BatchError
from .rng import NS_MASK, derive
from .transforms import ensure_image

logger = logging.getLogger(__name__)

MASK_KINDS = tuple(range(1, 9))
SIDED_KINDS = (1, 5)


@dataclass(frozen=True)
class MaskGeometry:
    """Normalized shape parameters; boxes are (x0, x1, y0, y1) in [0, 1]."""

    eye_box: tuple[float, float, float, float] = (0.18, 0.46, 0.33, 0.50)
    nose_box: tuple[float, float, float, float] = (0.38, 0.62, 0.45, 0.66)
    lower_box: tuple[float, float, float, float] = (0.15, 0.85, 0.55, 0.95)
    top_band: tuple[float, float, float, float] = (0.00, 1.00, 0.00, 0.52)
    stripe_period: float = 0.18
    stripe_duty: float = 1.0 / 3.0
    # phase 0.1 keeps the rasterized stripe coverage stable (<1%) from 32 to
    # 1024 px; phase 0 happens to quantize badly at 64 px
    stripe_phase: float = 0.1
    ellipse_center: tuple[float, float] = (0.50, 0.52)
    ellipse_axes: tuple[float, float] = (0.40, 0.48)
    fill: float = 0.5


DEFAULT_GEOMETRY = MaskGeometry()


@dataclass(frozen=True)
class MaskBitmap:
    """A realized occlusion raster plus the choices that produced it."""

    kind: int
    side: str | None
    bits: np.ndarray  # (H, W) bool, True = occluded

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


def _unit_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    u = (np.arange(width, dtype=np.float64) + 0.5) / width
    v = (np.arange(height, dtype=np.float64) + 0.5) / height
    return u[None, :], v[:, None]


def _rect(u: np.ndarray, v: np.ndarray, box: tuple[float, float, float, float]) -> np.ndarray:
    x0, x1, y0, y1 = box
    return (u >= x0) & (u < x1) & (v >= y0) & (v < y1)


def _ellipse_interior(u: np.ndarray, v: np.ndarray, geometry: MaskGeometry) -> np.ndarray:
    cx, cy = geometry.ellipse_center
    ax, ay = geometry.ellipse_axes
    return ((u - cx) / ax) ** 2 + ((v - cy) / ay) ** 2 <= 1.0


def _rasterize(kind: int, height: int, width: int, geometry: MaskGeometry) -> np.ndarray:
    """Left-side raster for sided kinds; the right side is its exact flip."""
    u, v = _unit_grid(height, width)
    if kind == 1:
        bits = _rect(u, v, geometry.eye_box)
    elif kind == 2:
        bits = _rect(u, v, geometry.nose_box)
    elif kind == 3:
        bits = _rect(u, v, geometry.lower_box)
    elif kind == 4:
        bits = _rect(u, v, geometry.top_band)
    elif kind == 5:
        bits = np.broadcast_to(u < 0.5, (height, width))
    elif kind == 6:
        phase = np.mod((u + v) / geometry.stripe_period + geometry.stripe_phase, 1.0)
        bits = phase < geometry.stripe_duty
    elif kind == 7:
        bits = ~_ellipse_interior(u, v, geometry)
    elif kind == 8:
        bits = _ellipse_interior(u, v, geometry)
    else:
        raise ValueError(f"unknown mask kind {kind}, expected 1..8")
    return np.ascontiguousarray(np.broadcast_to(bits, (height, width)))


def generate_mask(
    kind: int,
    height: int,
    width: int,
    rng: np.random.Generator | None = None,
    geometry: MaskGeometry = DEFAULT_GEOMETRY,
    side: str | None = None,
) -> MaskBitmap:
    """Rasterize one mask family; sided kinds draw left/right from rng.

    Passing `side` pins the choice without consuming randomness.
    """
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind}, expected 1..8")
    if height < 1 or width < 1:
        raise ValueError(f"mask dimensions must be positive, got {height}x{width}")
    if kind in SIDED_KINDS:
        if side is None:
            if rng is None:
                raise ValueError(f"mask kind {kind} needs an rng or an explicit side")
            side = "left" if rng.integers(0, 2) == 0 else "right"
        elif side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {side!r}")
        bits = _rasterize(kind, height, width, geometry)
        if side == "right":
            bits = np.ascontiguousarray(bits[:, ::-1])
    else:
        if side is not None:
            raise ValueError(f"mask kind {kind} takes no side")
        bits = _rasterize(kind, height, width, geometry)
    return MaskBitmap(kind=kind, side=side, bits=bits)


def apply_mask(img: np.ndarray, mask: MaskBitmap, fill: float = 0.5) -> np.ndarray:
    """Set occluded pixels of every channel to the fill intensity."""
    img = ensure_image(img)
    if img.shape[:2] != mask.bits.shape:
        raise ValueError(
            f"image {img.shape[:2]} and mask {mask.bits.shape} dimensions differ"
        )
    if not 0.0 <= fill <= 1.0:
        raise ValueError(f"fill must lie in [0, 1], got {fill}")
    out = img.copy()
    out[mask.bits] = fill
    return out


def mask_area_fraction(mask: MaskBitmap) -> float:
    """Occluded pixels over total pixels."""
    return float(np.count_nonzero(mask.bits)) / mask.bits.size


def mask_to_sidecar(mask: MaskBitmap) -> bytes:
    """Encode as P5 PGM: byte 255 = occluded, byte 0 = visible."""
    grey = np.where(mask.bits, 1.0, 0.0)[:, :, None]
    return codec.encode_image(grey, "ppm")


def sidecar_to_mask(data: bytes, kind: int, side: str | None = None) -> MaskBitmap:
    """Inverse of `mask_to_sidecar`; any intensity above 0.5 reads occluded."""
    grey = codec.decode_image(data)
    return MaskBitmap(kind=kind, side=side, bits=grey[:, :, 0] > 0.5)


def sidecar_path(out_dir: Path, rel: str) -> Path:
    return Path(out_dir) / (rel + ".mask.pgm")


def occlude_dataset(
    manifest: DatasetManifest,
    kind: int,
    seed: int,
    out_dir: Path,
    geometry: MaskGeometry = DEFAULT_GEOMETRY,
    threads: int = 1,
) -> DatasetManifest:
    """Write one occluded copy of every manifest image into out_dir.

    Each image gets its own random stream derived from (seed, sample index),
    so side choices are reproducible and independent of processing order.
    Alongside every image a .mask.pgm sidecar records the realized mask, and
    masks.json indexes the batch. Per-file failures are collected; the call
    raises only when no file succeeds.
    """
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind}, expected 1..8")
    out_dir = Path(out_dir)
    if not manifest.samples:
        return DatasetManifest(samples=[], classes=list(manifest.classes), root=out_dir)

    out_dir.mkdir(parents=True, exist_ok=True)

    def occlude_one(item: tuple[int, Sample]) -> tuple[Sample, dict] | tuple[None, tuple[str, str]]:
        index, sample = item
        try:
            img = codec.decode_image(manifest.resolve(sample).read_bytes())
            rng = derive(seed, NS_MASK, index)
            mask = generate_mask(kind, img.shape[0], img.shape[1], rng, geometry)
            occluded = apply_mask(img, mask, geometry.fill)
            dest = out_dir / sample.path
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(codec.encode_image(occluded, "ppm"))
            sidecar_path(out_dir, sample.path).write_bytes(mask_to_sidecar(mask))
            entry = {"sample": sample.path, "kind": kind, "side": mask.side, "seed": seed}
            return sample, entry
        except Exception as exc:  # per-file isolation; reported in the batch index
            return None, (sample.path, str(exc))

    items = list(enumerate(manifest.samples))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(occlude_one, items))
    else:
        results = [occlude_one(item) for item in items]

    kept: list[Sample] = []
    entries: list[dict] = []
    failures: list[tuple[str, str]] = []
    for sample, payload in results:
        if sample is None:
            failures.append(payload)  # type: ignore[arg-type]
        else:
            kept.append(sample)
            entries.append(payload)  # type: ignore[arg-type]
    if failures and not kept:
        raise BatchError("occlusion failed for every file", failures)
    for path, why in failures:
        logger.warning("skipped %s: %s", path, why)

    index = {
        "kind": kind,
        "seed": seed,
        "entries": entries,
        "failures": [{"sample": p, "error": e} for p, e in failures],
    }
    (out_dir / "masks.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    result = DatasetManifest(samples=kept, classes=list(manifest.classes), root=out_dir)
    save_manifest(result, out_dir / "manifest.csv")
    return result


def with_fill(geometry: MaskGeometry, fill: float) -> MaskGeometry:
    return replace(geometry, fill=fill)
