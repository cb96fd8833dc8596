"""Occlusion recovery: harmonic fill and facial mirror-symmetry fill.

Harmonic fill solves the discrete Laplace equation on the occluded pixels
(4-neighbor stencil, Dirichlet data from the visible pixels) with
Gauss-Seidel sweeps in natural raster order, which keeps the result fully
deterministic. Occluded pixels are seeded with the mean of their connected
component's boundary values, so every intermediate iterate, and hence the
final fill, obeys the discrete maximum principle. Channels share one sweep
loop; the update tolerance applies across all of them.

Mirror fill copies each occluded pixel from its horizontal mirror when that
mirror is visible (inputs are center-aligned faces, so the symmetry axis is
the vertical center line); the leftover pixels can then be fed to the
harmonic solver.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from . import codec
from .dataset import DatasetManifest, Sample, save_manifest
from .errors import BatchError, OcclubenchError
from .masks import MaskBitmap, sidecar_path, sidecar_to_mask
from .transforms import ensure_image

logger = logging.getLogger(__name__)

STRATEGIES = ("harmonic", "mirror_then_harmonic")


@dataclass(frozen=True)
class RecoveryStrategy:
    kind: str = "harmonic"
    tol: float = 1e-5
    max_iters: int = 10_000

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown recovery strategy {self.kind!r}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@njit(cache=True)
def _gauss_seidel(values, masked_idx, neighbors, neighbor_count, tol, max_iters):
    """Sweep masked pixels in raster order until the largest update < tol."""
    sweeps = 0
    n = masked_idx.shape[0]
    channels = values.shape[1]
    while sweeps < max_iters:
        delta = 0.0
        for i in range(n):
            p = masked_idx[i]
            cnt = neighbor_count[i]
            for c in range(channels):
                total = 0.0
                for j in range(cnt):
                    total += values[neighbors[i, j], c]
                new = total / cnt
                d = abs(new - values[p, c])
                if d > delta:
                    delta = d
                values[p, c] = new
        sweeps += 1
        if delta < tol:
            break
    return sweeps


def _neighbor_table(bits: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flat indices of masked pixels (raster order) and their in-grid neighbors."""
    h, w = bits.shape
    ys, xs = np.nonzero(bits)
    flat = (ys * w + xs).astype(np.int64)
    n = flat.size
    neighbors = np.zeros((n, 4), dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ny, nx = ys + dy, xs + dx
        ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        idx = np.nonzero(ok)[0]
        neighbors[idx, counts[idx]] = ny[idx] * w + nx[idx]
        counts[idx] += 1
    return flat, neighbors, counts


def _component_seed(img: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Seed each masked component with its boundary mean (per channel).

    Raises when a component has no visible boundary (whole-image masks).
    """
    h, w, channels = img.shape
    out = img.copy()
    visited = np.zeros((h, w), dtype=bool)
    for sy, sx in zip(*np.nonzero(bits)):
        if visited[sy, sx]:
            continue
        queue = deque([(int(sy), int(sx))])
        visited[sy, sx] = True
        component: list[tuple[int, int]] = []
        boundary_sum = np.zeros(channels, dtype=np.float64)
        boundary_n = 0
        while queue:
            y, x = queue.popleft()
            component.append((y, x))
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ny, nx = y + dy, x + dx
                if not (0 <= ny < h and 0 <= nx < w):
                    continue
                if bits[ny, nx]:
                    if not visited[ny, nx]:
                        visited[ny, nx] = True
                        queue.append((ny, nx))
                else:
                    boundary_sum += img[ny, nx]
                    boundary_n += 1
        if boundary_n == 0:
            raise OcclubenchError(
                "mask component has no visible boundary pixels; nothing to inpaint from"
            )
        mean = boundary_sum / boundary_n
        for y, x in component:
            out[y, x] = mean
    return out


def harmonic_inpaint(
    img: np.ndarray, mask: MaskBitmap, tol: float = 1e-5, max_iters: int = 10_000
) -> tuple[np.ndarray, int]:
    """Fill occluded pixels with the discrete harmonic extension.

    Returns the filled image and the number of Gauss-Seidel sweeps used.
    Visible pixels pass through bit-identically.
    """
    img = ensure_image(img)
    if img.shape[:2] != mask.bits.shape:
        raise ValueError(f"image {img.shape[:2]} and mask {mask.bits.shape} dimensions differ")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    bits = mask.bits
    if not bits.any():
        return img.copy(), 0
    seeded = _component_seed(np.asarray(img, dtype=np.float64), bits)
    h, w, channels = seeded.shape
    masked_idx, neighbors, counts = _neighbor_table(bits)
    values = seeded.reshape(h * w, channels)
    sweeps = int(_gauss_seidel(values, masked_idx, neighbors, counts, tol, max_iters))
    out = values.reshape(h, w, channels)
    out[~bits] = np.asarray(img, dtype=np.float64)[~bits]  # boundary stays bit-exact
    return out, sweeps


def mirror_fill(img: np.ndarray, mask: MaskBitmap) -> tuple[np.ndarray, MaskBitmap]:
    """Copy occluded pixels from their horizontal mirror where it is visible.

    Returns the partially filled image and the residual mask of pixels whose
    mirror was occluded too.
    """
    img = ensure_image(img)
    if img.shape[:2] != mask.bits.shape:
        raise ValueError(f"image {img.shape[:2]} and mask {mask.bits.shape} dimensions differ")
    bits = mask.bits
    mirrored_bits = bits[:, ::-1]
    fillable = bits & ~mirrored_bits
    out = img.copy()
    out[fillable] = img[:, ::-1, :][fillable]
    residual = np.ascontiguousarray(bits & mirrored_bits)
    return out, MaskBitmap(kind=mask.kind, side=mask.side, bits=residual)


def recover(img: np.ndarray, mask: MaskBitmap, strategy: RecoveryStrategy) -> np.ndarray:
    """Apply the chosen recovery strategy; deterministic for fixed inputs."""
    if strategy.kind == "harmonic":
        out, _ = harmonic_inpaint(img, mask, strategy.tol, strategy.max_iters)
        return out
    filled, residual = mirror_fill(img, mask)
    out, _ = harmonic_inpaint(filled, residual, strategy.tol, strategy.max_iters)
    return out


def recover_dataset(
    manifest: DatasetManifest,
    strategy: RecoveryStrategy,
    out_dir: Path,
    mask_dir: Path | None = None,
    threads: int = 1,
) -> DatasetManifest:
    """Recover every image of an occluded dataset using its mask sidecars.

    mask_dir defaults to the manifest root (where occlude_dataset leaves the
    sidecars). Per-file failures are collected; the call fails only when no
    file succeeds.
    """
    out_dir = Path(out_dir)
    mask_dir = Path(mask_dir) if mask_dir is not None else manifest.root
    if not manifest.samples:
        return DatasetManifest(samples=[], classes=list(manifest.classes), root=out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    index_file = mask_dir / "masks.json"
    kinds: dict[str, dict] = {}
    if index_file.exists():
        doc = json.loads(index_file.read_text())
        kinds = {e["sample"]: e for e in doc.get("entries", [])}

    def recover_one(sample: Sample):
        try:
            img = codec.decode_image(manifest.resolve(sample).read_bytes())
            entry = kinds.get(sample.path, {})
            mask = sidecar_to_mask(
                sidecar_path(mask_dir, sample.path).read_bytes(),
                kind=int(entry.get("kind", 0)),
                side=entry.get("side"),
            )
            out = recover(img, mask, strategy)
            dest = out_dir / sample.path
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(codec.encode_image(np.clip(out, 0.0, 1.0), "ppm"))
            return sample, None
        except Exception as exc:
            return None, (sample.path, str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(recover_one, manifest.samples))
    else:
        results = [recover_one(s) for s in manifest.samples]

    kept = [s for s, _ in results if s is not None]
    failures = [f for _, f in results if f is not None]
    if failures and not kept:
        raise BatchError("recovery failed for every file", failures)
    for path, why in failures:
        logger.warning("skipped %s: %s", path, why)
    result = DatasetManifest(samples=kept, classes=list(manifest.classes), root=out_dir)
    save_manifest(result, out_dir / "manifest.csv")
    return result
