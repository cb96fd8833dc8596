"""Training loop: SGD with momentum, one-cycle schedule, LR finder, phases.

Training runs two phases: a short warm-up with the convolutional backbone
frozen (head-only updates), then a full unfrozen phase. Each phase gets its
own one-cycle schedule (cosine rise to the configured peak learning rate,
cosine fall well below it, momentum cycled inversely). When Cutmix is
enabled it is applied to every batch of the unfrozen phase; the warm-up
phase is always mixed-free, so runs with and without Cutmix share identical
warm-up trajectories under the same seed.

Validation top-1 error is measured after every epoch and the weights of the
best epoch are returned.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .cutmix import cutmix_batch
from .dataset import DatasetSplit, Sample, iterate_batches, load_image
from .errors import OcclubenchError
from .rng import NS_CUTMIX, derive, mix_seed
from .transforms import DEFAULT_AUGMENT, AugmentConfig


@dataclass(frozen=True)
class ScheduleConfig:
    total_steps: int
    max_lr: float = 5e-3
    pct_start: float = 0.25
    div_start: float = 25.0
    div_final: float = 1e4
    momentum_high: float = 0.95
    momentum_low: float = 0.85

    def __post_init__(self):
        if not 0.0 < self.pct_start < 1.0:
            raise ValueError(f"pct_start must be in (0, 1), got {self.pct_start}")
        if self.div_start <= 1.0 or self.div_final <= 1.0:
            raise ValueError("div_start and div_final must exceed 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")


def one_cycle(step: float, cfg: ScheduleConfig) -> tuple[float, float]:
    """(lr, momentum) at a step of the cycle.

    Phase 1 (up to pct_start of the cycle): lr rises max_lr/div_start ->
    max_lr on a cosine while momentum falls high -> low. Phase 2: lr falls
    max_lr -> max_lr/div_final while momentum recovers. Convex-combination
    form keeps the boundary values exact.
    """
    if step < 0 or step > cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    boundary = cfg.pct_start * cfg.total_steps
    if step <= boundary:
        u = step / boundary
        lo, hi = cfg.max_lr / cfg.div_start, cfg.max_lr
        m0, m1 = cfg.momentum_high, cfg.momentum_low
    else:
        u = (step - boundary) / (cfg.total_steps - boundary)
        lo, hi = cfg.max_lr, cfg.max_lr / cfg.div_final
        m0, m1 = cfg.momentum_low, cfg.momentum_high
    w = 0.5 * (1.0 - math.cos(math.pi * u))
    return (1.0 - w) * lo + w * hi, (1.0 - w) * m0 + w * m1


@dataclass
class OptimizerState:
    velocity: np.ndarray
    step_count: int = 0
    lr: float = 0.0
    momentum: float = 0.0


def sgd_momentum_step(
    params: nn.ModelParams, grads: np.ndarray, state: OptimizerState
) -> tuple[nn.ModelParams, OptimizerState]:
    """v <- momentum*v + g; w <- w - lr*v. Pure: returns fresh params/state."""
    if grads.shape != params.theta.shape:
        raise ValueError(f"gradient shape {grads.shape} does not match {params.theta.shape}")
    velocity = state.momentum * state.velocity + grads
    theta = params.theta - state.lr * velocity
    new_params = replace(params, theta=theta)
    new_state = OptimizerState(
        velocity=velocity, step_count=state.step_count + 1, lr=state.lr, momentum=state.momentum
    )
    return new_params, new_state


@dataclass
class StepRecord:
    step: int
    lr: float
    momentum: float
    loss: float


@dataclass
class EpochRecord:
    epoch: int
    val_error: float


@dataclass
class TrainHistory:
    steps: list[StepRecord] = field(default_factory=list)
    epochs: list[EpochRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "steps": [[r.step, r.lr, r.momentum, r.loss] for r in self.steps],
            "epochs": [[r.epoch, r.val_error] for r in self.epochs],
        }

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Learning-rate range finder
# ---------------------------------------------------------------------------


def lr_find(
    params: nn.ModelParams,
    batches: Sequence[tuple[np.ndarray, np.ndarray]],
    start_lr: float = 1e-7,
    end_lr: float = 10.0,
    num_iters: int = 100,
    smoothing: float = 0.98,
) -> tuple[float, list[tuple[float, float]]]:
    """Exponential LR sweep on a throwaway copy of the model.

    Records the bias-corrected smoothed loss per step, aborts once it
    exceeds four times the best seen, and suggests the LR at the steepest
    descent of the smoothed curve. The caller's parameters are untouched.
    """
    if not batches:
        raise ValueError("lr_find needs at least one batch")
    if num_iters < 2:
        raise ValueError("num_iters must be >= 2")
    probe = params.copy()
    ratio = (end_lr / start_lr) ** (1.0 / (num_iters - 1))
    ema = 0.0
    best = math.inf
    curve: list[tuple[float, float]] = []
    for i in range(num_iters):
        lr = start_lr * ratio**i
        images, targets = batches[i % len(batches)]
        loss, grads = nn.compute_gradients(probe, images, targets)
        if not math.isfinite(loss):
            if i == 0:
                raise OcclubenchError(
                    f"loss diverged at the very first step (lr={lr:g}); try a smaller start_lr"
                )
            break
        ema = smoothing * ema + (1.0 - smoothing) * loss
        smoothed = ema / (1.0 - smoothing ** (i + 1))
        curve.append((lr, smoothed))
        if smoothed < best:
            best = smoothed
        elif smoothed > 4.0 * best:
            break
        probe = replace(probe, theta=probe.theta - lr * grads)
    if len(curve) < 2:
        raise OcclubenchError("lr sweep recorded fewer than two points; try a smaller start_lr")
    lrs = np.array([lr for lr, _ in curve])
    losses = np.array([ls for _, ls in curve])
    slopes = np.gradient(losses, np.log(lrs))
    return float(lrs[int(np.argmin(slopes))]), curve


# ---------------------------------------------------------------------------
# Full training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    arch: str = "smallconv"
    channels: tuple[int, int, int] = (16, 32, 64)
    epochs_frozen: int = 1
    epochs_unfrozen: int = 25
    batch_size: int = 64
    max_lr: float = 5e-3
    frozen_lr_div: float = 10.0  # warm-up phase peaks at max_lr / this
    pct_start: float = 0.25
    div_start: float = 25.0
    div_final: float = 1e4
    momentum_high: float = 0.95
    momentum_low: float = 0.85
    weight_decay: float = 0.0
    cutmix_enabled: bool = False
    cutmix_alpha: float = 1.0
    augment: bool = True
    seed: int = 0
    target_size: int = 32

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        if "channels" in doc:
            doc = dict(doc, channels=tuple(doc["channels"]))
        return cls(**doc)

    def to_dict(self) -> dict:
        doc = {f: getattr(self, f) for f in self.__dataclass_fields__}
        doc["channels"] = list(self.channels)
        return doc


def _schedule_for(cfg: TrainConfig, total_steps: int, max_lr: float) -> ScheduleConfig:
    return ScheduleConfig(
        total_steps=total_steps,
        max_lr=max_lr,
        pct_start=cfg.pct_start,
        div_start=cfg.div_start,
        div_final=cfg.div_final,
        momentum_high=cfg.momentum_high,
        momentum_low=cfg.momentum_low,
    )


def _validation_error(params: nn.ModelParams, samples: Iterable[Sample], split: DatasetSplit, cfg: TrainConfig) -> float:
    from .evaluate import topk_error  # local import to avoid a cycle

    samples = list(samples)
    logits = []
    labels = []
    for start in range(0, len(samples), cfg.batch_size):
        chunk = samples[start : start + cfg.batch_size]
        imgs = np.stack(
            [load_image(split.manifest, s, cfg.target_size) for s in chunk]
        )
        logits.append(nn.forward(params, imgs))
        labels.extend(s.class_index for s in chunk)
    return topk_error(np.concatenate(logits), np.array(labels), 1)


def train(split: DatasetSplit, cfg: TrainConfig) -> tuple[nn.ModelParams, TrainHistory]:
    """Two-phase run returning the best-validation weights and full history."""
    if not split.train:
        raise OcclubenchError("training set is empty")
    if cfg.epochs_frozen < 0 or cfg.epochs_unfrozen < 0 or cfg.epochs_frozen + cfg.epochs_unfrozen < 1:
        raise ValueError("need at least one training epoch")

    probe = load_image(split.manifest, split.train[0], cfg.target_size)
    in_channels = probe.shape[2]
    params = nn.init_model(
        cfg.arch,
        split.manifest.num_classes,
        cfg.seed,
        input_size=cfg.target_size,
        in_channels=in_channels,
        channels=cfg.channels,
    )
    params.descriptor["cutmix"] = bool(cfg.cutmix_enabled)

    steps_per_epoch = math.ceil(len(split.train) / cfg.batch_size)
    augment: AugmentConfig | None = DEFAULT_AUGMENT if cfg.augment else None
    history = TrainHistory()

    phases = []
    if cfg.epochs_frozen:
        phases.append(("frozen", cfg.epochs_frozen, cfg.max_lr / cfg.frozen_lr_div, True))
    if cfg.epochs_unfrozen:
        phases.append(("unfrozen", cfg.epochs_unfrozen, cfg.max_lr, False))

    best_theta = params.theta.copy()
    best_val = math.inf
    global_step = 0
    global_epoch = 0

    for phase_name, phase_epochs, phase_max_lr, freeze_backbone in phases:
        params = replace(
            params, frozen=frozenset({nn.BACKBONE}) if freeze_backbone else frozenset()
        )
        sched = _schedule_for(cfg, phase_epochs * steps_per_epoch, phase_max_lr)
        state = OptimizerState(velocity=np.zeros_like(params.theta))
        phase_step = 0
        cutmix_active = cfg.cutmix_enabled and phase_name == "unfrozen"
        for _ in range(phase_epochs):
            epoch_seed = mix_seed(cfg.seed, global_epoch)
            for images, labels in iterate_batches(
                split.train,
                split.manifest,
                batch_size=cfg.batch_size,
                epoch_seed=epoch_seed,
                target_size=cfg.target_size,
                augment=augment,
            ):
                if cutmix_active and images.shape[0] >= 2:
                    mixed = cutmix_batch(
                        list(images), list(labels), cfg.cutmix_alpha, derive(cfg.seed, NS_CUTMIX, global_step)
                    )
                    images = np.stack([m.image for m in mixed])
                    labels = np.stack([m.label for m in mixed])
                lr, momentum = one_cycle(phase_step, sched)
                state.lr, state.momentum = lr, momentum
                loss, grads = nn.compute_gradients(params, images, labels)
                if cfg.weight_decay:
                    grads = grads + cfg.weight_decay * params.theta * params.trainable_mask()
                params, state = sgd_momentum_step(params, grads, state)
                history.steps.append(StepRecord(global_step, lr, momentum, loss))
                phase_step += 1
                global_step += 1
            val_error = (
                _validation_error(params, split.val, split, cfg) if split.val else math.nan
            )
            history.epochs.append(EpochRecord(global_epoch, val_error))
            if split.val and val_error < best_val:
                best_val = val_error
                best_theta = params.theta.copy()
            global_epoch += 1

    if not split.val:
        best_theta = params.theta.copy()
    final = replace(params, theta=best_theta, frozen=frozenset())
    return final, history
