"""Labeled sample manifests, class filtering, stratified splits, batching.

A manifest is a CSV with header "path,identity"; paths are unique and
resolved relative to the manifest's directory. Class indices follow first
appearance order. Splits allocate a fixed number of validation and test
samples per class, using one random stream per class so the result does
not depend on row order within a class.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import codec
from .errors import ManifestError, OcclubenchError
from .rng import NS_AUGMENT, NS_SHUFFLE, NS_SPLIT, derive
from .transforms import AugmentConfig, apply_augmentation, resize_bilinear, sample_augmentation


@dataclass(frozen=True)
class Sample:
    path: str
    identity: str
    class_index: int


@dataclass
class DatasetManifest:
    samples: list[Sample]
    classes: list[str]  # class index -> identity name
    root: Path = field(default_factory=Path)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def resolve(self, sample: Sample) -> Path:
        p = Path(sample.path)
        return p if p.is_absolute() else self.root / p

    def by_class(self) -> list[list[Sample]]:
        groups: list[list[Sample]] = [[] for _ in self.classes]
        for s in self.samples:
            groups[s.class_index].append(s)
        return groups


def load_manifest(path: Path | str) -> DatasetManifest:
    """Parse a manifest CSV; classes indexed by first appearance."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from None
    return parse_manifest(text, root=path.parent)


def parse_manifest(text: str, root: Path | str = ".") -> DatasetManifest:
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows:
        raise ManifestError("empty manifest", line=1)
    header = [c.strip() for c in rows[0]]
    if header != ["path", "identity"]:
        raise ManifestError(f"expected header 'path,identity', got {','.join(header)!r}", line=1)
    samples: list[Sample] = []
    classes: list[str] = []
    class_of: dict[str, int] = {}
    seen: set[str] = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 2:
            raise ManifestError(f"expected 2 columns, got {len(row)}", line=lineno)
        p, identity = row[0].strip(), row[1].strip()
        if not p or not identity:
            raise ManifestError("empty path or identity", line=lineno)
        if p in seen:
            raise ManifestError(f"duplicate path {p!r}", line=lineno)
        seen.add(p)
        if identity not in class_of:
            class_of[identity] = len(classes)
            classes.append(identity)
        samples.append(Sample(path=p, identity=identity, class_index=class_of[identity]))
    if not samples:
        raise ManifestError("manifest has a header but no rows", line=2)
    return DatasetManifest(samples=samples, classes=classes, root=Path(root))


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "identity"])
        for s in manifest.samples:
            writer.writerow([s.path, s.identity])


def filter_min_images(manifest: DatasetManifest, min_count: int) -> DatasetManifest:
    """Drop classes with fewer than min_count samples; recompact indices."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts = [0] * manifest.num_classes
    for s in manifest.samples:
        counts[s.class_index] += 1
    keep = [i for i, c in enumerate(counts) if c >= min_count]
    if not keep:
        raise OcclubenchError(f"no class has at least {min_count} images")
    remap = {old: new for new, old in enumerate(keep)}
    classes = [manifest.classes[i] for i in keep]
    samples = [
        Sample(path=s.path, identity=s.identity, class_index=remap[s.class_index])
        for s in manifest.samples
        if s.class_index in remap
    ]
    return DatasetManifest(samples=samples, classes=classes, root=manifest.root)


@dataclass
class DatasetSplit:
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]
    seed: int
    manifest: DatasetManifest

    def part(self, name: str) -> list[Sample]:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ValueError(f"unknown split part {name!r}") from None

    def per_class_counts(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for name in ("train", "val", "test"):
            for s in self.part(name):
                out.setdefault(s.identity, {"train": 0, "val": 0, "test": 0})[name] += 1
        return out


def stratified_split(
    manifest: DatasetManifest, val_per_class: int, test_per_class: int, seed: int
) -> DatasetSplit:
    """Per class: shuffle, take test_per_class, then val_per_class, rest train."""
    if val_per_class < 0 or test_per_class < 0:
        raise ValueError("per-class counts must be non-negative")
    train: list[Sample] = []
    val: list[Sample] = []
    test: list[Sample] = []
    for class_index, group in enumerate(manifest.by_class()):
        need = val_per_class + test_per_class + 1
        if len(group) < need:
            raise OcclubenchError(
                f"class {manifest.classes[class_index]!r} has {len(group)} samples, "
                f"needs at least {need}"
            )
        # canonical path order first, so the split does not depend on row
        # order within the class
        group = sorted(group, key=lambda s: s.path)
        order = derive(seed, NS_SPLIT, class_index).permutation(len(group))
        shuffled = [group[i] for i in order]
        test.extend(shuffled[:test_per_class])
        val.extend(shuffled[test_per_class : test_per_class + val_per_class])
        train.extend(shuffled[test_per_class + val_per_class :])
    return DatasetSplit(train=train, val=val, test=test, seed=seed, manifest=manifest)


def save_split(split: DatasetSplit, path: Path | str) -> None:
    doc = {
        "seed": split.seed,
        "train": [s.path for s in split.train],
        "val": [s.path for s in split.val],
        "test": [s.path for s in split.test],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_split(path: Path | str, manifest: DatasetManifest) -> DatasetSplit:
    """Rehydrate a saved split by joining its paths against a manifest."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read split {path}: {exc}") from None
    by_path = {s.path: s for s in manifest.samples}
    parts: dict[str, list[Sample]] = {}
    for name in ("train", "val", "test"):
        if name not in doc:
            raise ManifestError(f"split file missing {name!r} list")
        missing = [p for p in doc[name] if p not in by_path]
        if missing:
            raise ManifestError(f"split references paths absent from manifest: {missing[:3]}")
        parts[name] = [by_path[p] for p in doc[name]]
    return DatasetSplit(
        train=parts["train"],
        val=parts["val"],
        test=parts["test"],
        seed=int(doc.get("seed", 0)),
        manifest=manifest,
    )


def encode_label(class_index: int, num_classes: int) -> np.ndarray:
    """One-hot probability vector."""
    if not 0 <= class_index < num_classes:
        raise ValueError(f"class index {class_index} out of range for {num_classes} classes")
    label = np.zeros(num_classes, dtype=np.float64)
    label[class_index] = 1.0
    return label


def load_image(manifest: DatasetManifest, sample: Sample, target_size: int) -> np.ndarray:
    full = manifest.resolve(sample)
    try:
        data = full.read_bytes()
    except OSError as exc:
        raise OcclubenchError(f"cannot read image {full}: {exc}") from None
    img = codec.decode_image(data)
    if img.shape[0] != target_size or img.shape[1] != target_size:
        img = resize_bilinear(img, target_size, target_size)
    return img


def iterate_batches(
    samples: Sequence[Sample],
    manifest: DatasetManifest,
    batch_size: int,
    epoch_seed: int,
    target_size: int,
    augment: AugmentConfig | None = None,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield epoch-shuffled (images, one-hot labels) batches.

    Augmentation parameters, when requested, are drawn fresh per image per
    epoch. The short final batch is kept, so one epoch yields every sample
    exactly once.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    num_classes = manifest.num_classes
    order = derive(epoch_seed, NS_SHUFFLE).permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        chunk = order[start : start + batch_size]
        images = []
        labels = []
        for j in chunk:
            sample = samples[int(j)]
            img = load_image(manifest, sample, target_size)
            if augment is not None:
                params = sample_augmentation(derive(epoch_seed, NS_AUGMENT, int(j)), augment)
                img = apply_augmentation(img, params)
            images.append(img)
            labels.append(encode_label(sample.class_index, num_classes))
        yield np.stack(images), np.stack(labels)
