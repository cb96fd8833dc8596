"""Cutmix batch regularization.

One mixing ratio and one rectangular patch are drawn per batch; every
sample receives the patch from a randomly permuted partner, and labels mix
in exact proportion to the surviving pixel area. The recorded ratio is
always recomputed from the clipped integer box, so the area-label identity
holds even when the patch spills over the image edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import encode_label  # noqa: F401  (re-export convenience for callers)


@dataclass(frozen=True)
class CutBox:
    """Half-open pixel rectangle [x0, x1) x [y0, y1), already clipped."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def area(self) -> int:
        return max(0, self.x1 - self.x0) * max(0, self.y1 - self.y0)


@dataclass(frozen=True)
class MixedSample:
    image: np.ndarray
    label: np.ndarray
    lambda_adj: float
    partner_index: int
    box: CutBox


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    """Beta(alpha, alpha) via two gamma draws; alpha=1 is Uniform(0, 1)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    while True:
        g1 = rng.standard_gamma(alpha)
        g2 = rng.standard_gamma(alpha)
        total = g1 + g2
        if total > 0.0:
            lam = g1 / total
            if 0.0 < lam < 1.0:
                return float(lam)


def box_at(cx: int, cy: int, width: int, height: int, lam: float) -> CutBox:
    """Patch of half-extents (W*sqrt(1-lam)/2, H*sqrt(1-lam)/2) around a center."""
    ratio = math.sqrt(1.0 - lam)
    rw = width * ratio / 2.0
    rh = height * ratio / 2.0
    # round-half-up keeps the rasterized width unbiased at .5 boundaries
    x0 = int(math.floor(cx - rw + 0.5))
    x1 = int(math.floor(cx + rw + 0.5))
    y0 = int(math.floor(cy - rh + 0.5))
    y1 = int(math.floor(cy + rh + 0.5))
    return CutBox(
        x0=max(0, min(x0, width)),
        y0=max(0, min(y0, height)),
        x1=max(0, min(x1, width)),
        y1=max(0, min(y1, height)),
    )


def sample_box(width: int, height: int, lam: float, rng: np.random.Generator) -> CutBox:
    """Draw a uniform center and cut the lambda-determined patch around it."""
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie strictly inside (0, 1), got {lam}")
    cx = int(rng.integers(0, width))
    cy = int(rng.integers(0, height))
    return box_at(cx, cy, width, height, lam)


def cutmix_pair(a: np.ndarray, b: np.ndarray, box: CutBox) -> tuple[np.ndarray, float]:
    """Paste b's box into a; returns the image and the surviving-area ratio."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    height, width = a.shape[:2]
    if not (0 <= box.x0 <= box.x1 <= width and 0 <= box.y0 <= box.y1 <= height):
        raise ValueError(f"box {box} exceeds image bounds {width}x{height}")
    out = a.copy()
    out[box.y0 : box.y1, box.x0 : box.x1] = b[box.y0 : box.y1, box.x0 : box.x1]
    lambda_adj = 1.0 - box.area / (width * height)
    return out, lambda_adj


def mix_labels(ya: np.ndarray, yb: np.ndarray, lambda_adj: float) -> np.ndarray:
    """Affine label combination; stays on the simplex without renormalizing."""
    ya = np.asarray(ya, dtype=np.float64)
    yb = np.asarray(yb, dtype=np.float64)
    if ya.shape != yb.shape:
        raise ValueError(f"label lengths differ: {ya.shape} vs {yb.shape}")
    for name, y in (("ya", ya), ("yb", yb)):
        if abs(float(y.sum()) - 1.0) > 1e-9 or float(y.min()) < 0.0:
            raise ValueError(f"{name} is not a probability vector")
    return lambda_adj * ya + (1.0 - lambda_adj) * yb


def cutmix_batch(
    images: np.ndarray | list[np.ndarray],
    labels: np.ndarray | list[np.ndarray],
    alpha: float,
    rng: np.random.Generator,
) -> list[MixedSample]:
    """Mix a whole batch with one shared (lambda, box) and a random partner permutation."""
    images = [np.asarray(im) for im in images]
    labels = [np.asarray(lb, dtype=np.float64) for lb in labels]
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images vs {len(labels)} labels")
    if len(images) < 2:
        raise ValueError("cutmix needs a batch of at least 2 samples")
    shape = images[0].shape
    for im in images[1:]:
        if im.shape != shape:
            raise ValueError("all batch images must share one shape")
    height, width = shape[:2]
    lam = sample_lambda(alpha, rng)
    box = sample_box(width, height, lam, rng)
    partners = rng.permutation(len(images))
    out: list[MixedSample] = []
    for i, partner in enumerate(partners):
        mixed, lambda_adj = cutmix_pair(images[i], images[int(partner)], box)
        label = mix_labels(labels[i], labels[int(partner)], lambda_adj)
        out.append(
            MixedSample(
                image=mixed, label=label, lambda_adj=lambda_adj,
                partner_index=int(partner), box=box,
            )
        )
    return out
