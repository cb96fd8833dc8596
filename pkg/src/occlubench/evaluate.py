"""Top-k error computation and per-condition evaluation.

A condition is one evaluation dataset for one model: the clean test set, an
occluded variant ("mask3"), or a recovered variant ("mask3+inpaint").
Results carry both top-1 and top-5 error plus the sample count; a report
bundles every condition measured for one model together with its chance
level 1 - 1/K.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .dataset import DatasetManifest, load_image
from .errors import OcclubenchError


def topk_error(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose true class is outside the k best logits.

    Ties are broken toward the lower class index, so results are exactly
    reproducible.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError(f"logits must be (N, K), got shape {logits.shape}")
    n, num_classes = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels must be ({n},), got {labels.shape}")
    if not 1 <= k <= num_classes:
        raise ValueError(f"k must lie in [1, {num_classes}], got {k}")
    # stable sort on descending value keeps lower indices first among ties
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    hit = (top == labels[:, None]).any(axis=1)
    return int(np.count_nonzero(~hit)) / n


@dataclass(frozen=True)
class ConditionResult:
    condition: str
    n: int
    top1_error: float
    top5_error: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("condition needs at least one sample")
        if not 0.0 <= self.top5_error <= self.top1_error <= 1.0:
            raise ValueError(
                f"errors must satisfy 0 <= top5 <= top1 <= 1, got "
                f"top1={self.top1_error}, top5={self.top5_error}"
            )


@dataclass
class EvalReport:
    model: dict
    chance_level: float
    conditions: list[ConditionResult] = field(default_factory=list)

    def add(self, result: ConditionResult) -> None:
        if any(c.condition == result.condition for c in self.conditions):
            raise ValueError(f"duplicate condition id {result.condition!r}")
        self.conditions.append(result)

    def get(self, condition: str) -> ConditionResult:
        for c in self.conditions:
            if c.condition == condition:
                return c
        raise KeyError(condition)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "chance_level": self.chance_level,
            "conditions": [
                {
                    "id": c.condition,
                    "n": c.n,
                    "top1_error": c.top1_error,
                    "top5_error": c.top5_error,
                }
                for c in self.conditions
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        report = cls(model=dict(doc["model"]), chance_level=float(doc["chance_level"]))
        for c in doc["conditions"]:
            report.add(
                ConditionResult(
                    condition=c["id"],
                    n=int(c["n"]),
                    top1_error=float(c["top1_error"]),
                    top5_error=float(c["top5_error"]),
                )
            )
        return report


def evaluate_condition(
    params: nn.ModelParams,
    manifest: DatasetManifest,
    condition: str,
    target_size: int,
    batch_size: int = 64,
) -> ConditionResult:
    """Deterministic forward pass over a manifest; no augmentation."""
    if manifest.num_classes != params.num_classes:
        raise OcclubenchError(
            f"manifest has {manifest.num_classes} classes but the model expects "
            f"{params.num_classes}"
        )
    if not manifest.samples:
        raise OcclubenchError(f"condition {condition!r} has no samples")
    k5 = min(5, params.num_classes)
    logit_chunks = []
    labels = []
    for start in range(0, len(manifest.samples), batch_size):
        chunk = manifest.samples[start : start + batch_size]
        images = np.stack([load_image(manifest, s, target_size) for s in chunk])
        logit_chunks.append(nn.forward(params, images))
        labels.extend(s.class_index for s in chunk)
    logits = np.concatenate(logit_chunks)
    label_arr = np.array(labels)
    return ConditionResult(
        condition=condition,
        n=len(labels),
        top1_error=topk_error(logits, label_arr, 1),
        top5_error=topk_error(logits, label_arr, k5),
    )


def compare_models(reports: list[EvalReport]) -> dict:
    """Cross-model table: degradation ratio per condition and inpainting delta.

    The degradation ratio is error(condition)/error("clean"), omitted (None)
    when the clean error is zero; the inpainting delta is
    error(mask) - error(mask+inpaint) wherever both conditions exist.
    """
    if not reports:
        raise ValueError("need at least one report")
    base_ids = [c.condition for c in reports[0].conditions]
    for i, rep in enumerate(reports[1:], start=1):
        ids = [c.condition for c in rep.conditions]
        if set(ids) != set(base_ids):
            missing = sorted(set(base_ids) ^ set(ids))
            raise OcclubenchError(
                f"report {i} condition ids differ from report 0: {missing}"
            )

    def ratio(rep: EvalReport, cid: str) -> float | None:
        clean = rep.get("clean").top1_error if _has(rep, "clean") else None
        if clean is None or clean == 0.0:
            return None
        return rep.get(cid).top1_error / clean

    def _has(rep: EvalReport, cid: str) -> bool:
        return any(c.condition == cid for c in rep.conditions)

    conditions = []
    for cid in base_ids:
        conditions.append(
            {
                "id": cid,
                "top1_error": [r.get(cid).top1_error for r in reports],
                "top5_error": [r.get(cid).top5_error for r in reports],
                "degradation_ratio": [ratio(r, cid) for r in reports],
            }
        )
    deltas = []
    for cid in base_ids:
        recovered = cid + "+inpaint"
        if recovered in base_ids:
            deltas.append(
                {
                    "id": cid,
                    "inpaint_delta": [
                        r.get(cid).top1_error - r.get(recovered).top1_error for r in reports
                    ],
                }
            )
    return {
        "models": [r.model for r in reports],
        "conditions": conditions,
        "inpaint_deltas": deltas,
    }
