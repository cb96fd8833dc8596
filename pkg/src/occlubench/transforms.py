"""Geometric and photometric transforms plus the training augmentation sampler.

All transforms are pure functions over (H, W, C) float images with
intensities in [0, 1]. Sampling is half-pixel-centered bilinear; affine
resampling reflects out-of-bounds coordinates back into the image instead
of padding with a constant, so transforms never introduce border blocks
that could read as occlusions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def ensure_image(img: np.ndarray) -> np.ndarray:
    """Validate the (H, W, C) unit-interval contract and return the array."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, C) image with C in {{1, 3}}, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"image dimensions must be positive, got {img.shape[:2]}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def hflip(img: np.ndarray) -> np.ndarray:
    """Mirror the image about its vertical center line (exact involution)."""
    return np.ascontiguousarray(ensure_image(img)[:, ::-1, :])


def _reflect(coords: np.ndarray, n: int) -> np.ndarray:
    # Mirror about pixel centers 0 and n-1, period 2(n-1); no edge repeat.
    if n == 1:
        return np.zeros_like(coords)
    period = 2.0 * (n - 1)
    c = np.abs(coords) % period
    return np.where(c > n - 1, period - c, c)


def _bilinear_gather(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample img at fractional grid coordinates already inside [0, dim-1]."""
    h, w = img.shape[:2]
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.clip(y0, 0, h - 1)
    x0 = np.clip(x0, 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize with half-pixel-centered bilinear interpolation."""
    img = ensure_image(img)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target dimensions must be positive, got {out_h}x{out_w}")
    h, w = img.shape[:2]
    if (out_h, out_w) == (h, w):
        return img.copy()
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return np.clip(_bilinear_gather(img, grid_y, grid_x), 0.0, 1.0)


def affine_transform(img: np.ndarray, rotation: float, zoom: float, shear: float) -> np.ndarray:
    """Rotate/zoom/shear about the image center; reflection-padded bilinear.

    The content map is zoom . rotation . shear; positive zoom magnifies.
    Output has the same shape as the input.
    """
    img = ensure_image(img)
    h, w = img.shape[:2]
    theta = np.deg2rad(rotation)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    fwd = np.array([[zoom, 0.0], [0.0, zoom]]) @ np.array(
        [[cos_t, -sin_t], [sin_t, cos_t]]
    ) @ np.array([[1.0, shear], [0.0, 1.0]])
    det = fwd[0, 0] * fwd[1, 1] - fwd[0, 1] * fwd[1, 0]
    inv = np.array([[fwd[1, 1], -fwd[0, 1]], [-fwd[1, 0], fwd[0, 0]]]) / det
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    grid_y, grid_x = np.meshgrid(
        np.arange(h, dtype=np.float64) - cy, np.arange(w, dtype=np.float64) - cx, indexing="ij"
    )
    src_x = inv[0, 0] * grid_x + inv[0, 1] * grid_y + cx
    src_y = inv[1, 0] * grid_x + inv[1, 1] * grid_y + cy
    src_x = _reflect(src_x, w)
    src_y = _reflect(src_y, h)
    return np.clip(_bilinear_gather(img, src_y, src_x), 0.0, 1.0)


def adjust_lighting(img: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    """Contrast about mid-grey then additive brightness, clamped to [0, 1]."""
    img = ensure_image(img)
    return np.clip(contrast * (img - 0.5) + 0.5 + brightness, 0.0, 1.0)


@dataclass(frozen=True)
class AugmentParams:
    """One realized draw of the training augmentation."""

    hflip: bool = False
    rotation: float = 0.0  # degrees
    zoom: float = 1.0
    shear: float = 0.0
    brightness: float = 0.0
    contrast: float = 1.0


IDENTITY_AUGMENT = AugmentParams()


@dataclass(frozen=True)
class AugmentConfig:
    """Sampling ranges; defaults mirror common transfer-learning settings."""

    hflip_prob: float = 0.5
    max_rotation: float = 10.0
    max_zoom: float = 1.1
    max_shear: float = 0.05
    max_brightness: float = 0.1
    contrast_range: tuple[float, float] = (0.9, 1.1)


DEFAULT_AUGMENT = AugmentConfig()


def sample_augmentation(rng: np.random.Generator, config: AugmentConfig = DEFAULT_AUGMENT) -> AugmentParams:
    """Draw augmentation parameters uniformly within the configured ranges."""
    return AugmentParams(
        hflip=bool(rng.random() < config.hflip_prob),
        rotation=float(rng.uniform(-config.max_rotation, config.max_rotation)),
        zoom=float(rng.uniform(1.0, config.max_zoom)),
        shear=float(rng.uniform(-config.max_shear, config.max_shear)),
        brightness=float(rng.uniform(-config.max_brightness, config.max_brightness)),
        contrast=float(rng.uniform(*config.contrast_range)),
    )


def apply_augmentation(img: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Apply hflip, then the affine map, then lighting, in that fixed order."""
    out = ensure_image(img)
    if params.hflip:
        out = hflip(out)
    if (params.rotation, params.zoom, params.shear) != (0.0, 1.0, 0.0):
        out = affine_transform(out, params.rotation, params.zoom, params.shear)
    if (params.brightness, params.contrast) != (0.0, 1.0):
        out = adjust_lighting(out, params.brightness, params.contrast)
    return out
