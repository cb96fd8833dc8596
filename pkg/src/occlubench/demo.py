"""Procedural identity dataset so the full pipeline runs without real data.

Each identity is a fixed palette of facial features (eyes, nose, mouth,
brow bar, cheek spots, skin tone) rendered into a small color image. The
feature loci match the occlusion geometry: every class cue lives inside the
face ellipse, eyes sit inside the eye boxes, the mouth inside the lower-face
box, and so on, which makes each mask family remove a meaningful part of
the identity evidence. Backgrounds are random per image and carry no class
information, so masking out the face really does push a classifier to
chance.

Per-image variation: jittered feature positions (kept left-right symmetric,
faces stay mirror-recoverable), per-feature color jitter, a random
background gradient, and pixel noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import codec
from .dataset import DatasetManifest, Sample, save_manifest
from .rng import NS_DEMO, derive

FACE_CENTER = (0.50, 0.52)
FACE_AXES = (0.40, 0.48)
EYE_CENTERS = ((0.32, 0.415), (0.68, 0.415))
NOSE_CENTER = (0.50, 0.555)
MOUTH_CENTER = (0.50, 0.75)
BROW_CENTER = (0.50, 0.22)
CHEEK_CENTERS = ((0.30, 0.62), (0.70, 0.62))


@dataclass(frozen=True)
class DemoIdentity:
    skin: np.ndarray
    eye: np.ndarray
    nose: np.ndarray
    mouth: np.ndarray
    brow: np.ndarray
    cheek: np.ndarray
    eye_radius: float
    nose_radius: float
    mouth_half: tuple[float, float]
    brow_half: tuple[float, float]
    cheek_radius: float


def _color(rng: np.random.Generator) -> np.ndarray:
    # channels snap to well-separated levels so identities survive the
    # +-0.1 lighting jitter of training augmentation
    return rng.choice([0.05, 0.50, 0.95], size=3)


def make_identity(seed: int, class_index: int) -> DemoIdentity:
    rng = derive(seed, NS_DEMO, class_index)
    return DemoIdentity(
        skin=rng.choice([0.35, 0.60, 0.85], size=3),
        eye=_color(rng),
        nose=_color(rng),
        mouth=_color(rng),
        brow=_color(rng),
        cheek=_color(rng),
        eye_radius=float(rng.uniform(0.050, 0.065)),
        nose_radius=float(rng.uniform(0.040, 0.055)),
        mouth_half=(float(rng.uniform(0.10, 0.14)), float(rng.uniform(0.030, 0.050))),
        brow_half=(float(rng.uniform(0.12, 0.16)), float(rng.uniform(0.035, 0.050))),
        cheek_radius=float(rng.uniform(0.040, 0.060)),
    )


def _disc(u, v, cx, cy, r):
    return (u - cx) ** 2 + (v - cy) ** 2 <= r * r


def _box(u, v, cx, cy, hw, hh):
    return (np.abs(u - cx) <= hw) & (np.abs(v - cy) <= hh)


def render_face(identity: DemoIdentity, size: int, rng: np.random.Generator) -> np.ndarray:
    """One noisy sample of an identity at size x size, RGB in [0, 1]."""
    u = (np.arange(size) + 0.5) / size
    v = (np.arange(size) + 0.5) / size
    u, v = np.meshgrid(u, v)

    # class-free background: random base plus a random gradient
    base = rng.uniform(0.15, 0.85, size=3)
    gx = rng.uniform(-0.3, 0.3, size=3)
    gy = rng.uniform(-0.3, 0.3, size=3)
    img = base + gx * (u[:, :, None] - 0.5) + gy * (v[:, :, None] - 0.5)

    def jitter(lo: float = -0.016, hi: float = 0.016) -> float:
        return float(rng.uniform(lo, hi))

    def tint(color: np.ndarray) -> np.ndarray:
        return np.clip(color + rng.normal(0.0, 0.02, size=3), 0.0, 1.0)

    cx, cy = FACE_CENTER
    ax, ay = FACE_AXES
    face = ((u - cx) / ax) ** 2 + ((v - cy) / ay) ** 2 <= 1.0
    img[face] = tint(identity.skin)

    bdx, bdy = jitter(), jitter()
    brow = _box(u, v, BROW_CENTER[0] + bdx, BROW_CENTER[1] + bdy, *identity.brow_half)
    img[brow & face] = tint(identity.brow)

    # eyes share one jitter, mirrored, so faces stay left-right symmetric
    edx, edy = jitter(-0.010, 0.010), jitter(-0.010, 0.010)
    eye_color = tint(identity.eye)
    (lx, ly), (rx, ry) = EYE_CENTERS
    img[_disc(u, v, lx + edx, ly + edy, identity.eye_radius)] = eye_color
    img[_disc(u, v, rx - edx, ry + edy, identity.eye_radius)] = eye_color

    ndy = jitter(-0.010, 0.010)
    img[_disc(u, v, NOSE_CENTER[0], NOSE_CENTER[1] + ndy, identity.nose_radius)] = tint(
        identity.nose
    )

    cdx, cdy = jitter(-0.010, 0.010), jitter(-0.010, 0.010)
    cheek_color = tint(identity.cheek)
    (clx, cly), (crx, cry) = CHEEK_CENTERS
    img[_disc(u, v, clx + cdx, cly + cdy, identity.cheek_radius)] = cheek_color
    img[_disc(u, v, crx - cdx, cry + cdy, identity.cheek_radius)] = cheek_color

    mdy = jitter(-0.010, 0.010)
    mouth = _box(u, v, MOUTH_CENTER[0], MOUTH_CENTER[1] + mdy, *identity.mouth_half)
    img[mouth] = tint(identity.mouth)

    img = img + rng.normal(0.0, 0.035, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def write_demo_dataset(
    out_dir: Path | str,
    classes: int = 20,
    per_class: int = 25,
    size: int = 32,
    seed: int = 0,
) -> DatasetManifest:
    """Render the dataset to out_dir/images and write out_dir/manifest.csv."""
    if classes < 2 or per_class < 1:
        raise ValueError("need at least 2 classes and 1 image per class")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    samples: list[Sample] = []
    names: list[str] = []
    for ci in range(classes):
        identity = make_identity(seed, ci)
        name = f"id{ci:02d}"
        names.append(name)
        for j in range(per_class):
            img = render_face(identity, size, derive(seed, NS_DEMO, ci, j))
            rel = f"images/{name}_{j:03d}.ppm"
            (out_dir / rel).write_bytes(codec.encode_image(img, "ppm"))
            samples.append(Sample(path=rel, identity=name, class_index=ci))
    manifest = DatasetManifest(samples=samples, classes=names, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest
