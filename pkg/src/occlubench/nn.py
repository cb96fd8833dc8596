"""A small convolutional classifier with hand-written backpropagation.

The default "smallconv" stack is three 3x3 conv blocks (ReLU, 2x2 max-pool
after the first two, global average pooling after the third) feeding one
linear layer. Parameters live in a single flat vector with a name → slice
map, which keeps SGD updates, freezing, checkpointing, and gradient checks
uniform. Layers are grouped into "backbone" (everything convolutional) and
"head" (the final linear map) so the backbone can be frozen for warm-up
epochs.

All forward/backward math runs in the dtype of the parameter vector:
float32 for training, float64 for gradient verification.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CheckpointError
from .rng import NS_INIT, derive

CHECKPOINT_MAGIC = b"OCRC"
CHECKPOINT_VERSION = 1

BACKBONE = "backbone"
HEAD = "head"


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # conv3x3 | relu | maxpool2 | gap | flatten | linear
    group: str
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    w_shape: tuple[int, ...] | None = None
    b_shape: tuple[int, ...] | None = None

    @property
    def param_count(self) -> int:
        count = 0
        if self.w_shape:
            count += int(np.prod(self.w_shape))
        if self.b_shape:
            count += int(np.prod(self.b_shape))
        return count


def build_layers(
    arch: str,
    input_shape: tuple[int, int, int],
    num_classes: int,
    channels: tuple[int, ...] = (16, 32, 64),
) -> list[LayerSpec]:
    h, w, c = input_shape
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    layers: list[LayerSpec] = []
    if arch == "smallconv":
        if len(channels) != 3:
            raise ValueError(f"smallconv takes 3 channel widths, got {channels}")
        if h % 4 or w % 4 or h < 4 or w < 4:
            raise ValueError(f"smallconv input must be a multiple of 4 and >= 4, got {h}x{w}")
        shapes = [(h, w, c)]

        def add(name: str, kind: str, group: str, out_shape, w_shape=None, b_shape=None):
            layers.append(
                LayerSpec(name, kind, group, shapes[-1], tuple(out_shape), w_shape, b_shape)
            )
            shapes.append(tuple(out_shape))

        c1, c2, c3 = channels
        add("conv1", "conv3x3", BACKBONE, (h, w, c1), (3, 3, c, c1), (c1,))
        add("relu1", "relu", BACKBONE, (h, w, c1))
        add("pool1", "maxpool2", BACKBONE, (h // 2, w // 2, c1))
        add("conv2", "conv3x3", BACKBONE, (h // 2, w // 2, c2), (3, 3, c1, c2), (c2,))
        add("relu2", "relu", BACKBONE, (h // 2, w // 2, c2))
        add("pool2", "maxpool2", BACKBONE, (h // 4, w // 4, c2))
        add("conv3", "conv3x3", BACKBONE, (h // 4, w // 4, c3), (3, 3, c2, c3), (c3,))
        add("relu3", "relu", BACKBONE, (h // 4, w // 4, c3))
        add("gap", "gap", BACKBONE, (c3,))
        add("fc", "linear", HEAD, (num_classes,), (c3, num_classes), (num_classes,))
    elif arch == "linear":
        flat = h * w * c
        layers.append(LayerSpec("flatten", "flatten", BACKBONE, (h, w, c), (flat,)))
        layers.append(
            LayerSpec("fc", "linear", HEAD, (flat,), (num_classes,), (flat, num_classes), (num_classes,))
        )
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    return layers


def count_params(layers: list[LayerSpec]) -> int:
    return sum(spec.param_count for spec in layers)


@dataclass
class ModelParams:
    descriptor: dict
    layers: list[LayerSpec]
    theta: np.ndarray  # flat parameter vector
    slices: dict[str, slice]
    frozen: frozenset[str] = field(default_factory=frozenset)

    @property
    def num_classes(self) -> int:
        return int(self.descriptor["classes"])

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(self.descriptor["input"])  # type: ignore[return-value]

    def param(self, name: str) -> np.ndarray:
        spec = next(s for s in self.layers if s.name == name.split(".")[0])
        shape = spec.w_shape if name.endswith(".w") else spec.b_shape
        return self.theta[self.slices[name]].reshape(shape)

    def trainable_mask(self) -> np.ndarray:
        mask = np.ones(self.theta.size, dtype=bool)
        for spec in self.layers:
            if spec.group in self.frozen and spec.param_count:
                mask[self.slices[spec.name + ".w"]] = False
                mask[self.slices[spec.name + ".b"]] = False
        return mask

    def copy(self) -> "ModelParams":
        return replace(self, theta=self.theta.copy())


def init_model(
    arch: str,
    num_classes: int,
    seed: int,
    input_size: int = 32,
    in_channels: int = 3,
    channels: tuple[int, ...] = (16, 32, 64),
    dtype=np.float32,
) -> ModelParams:
    """He fan-in initialization for weights, zero biases, per-seed deterministic."""
    input_shape = (input_size, input_size, in_channels)
    layers = build_layers(arch, input_shape, num_classes, channels)
    chunks: list[np.ndarray] = []
    slices: dict[str, slice] = {}
    offset = 0
    for idx, spec in enumerate(layers):
        if not spec.param_count:
            continue
        rng = derive(seed, NS_INIT, idx)
        fan_in = int(np.prod(spec.w_shape[:-1]))
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=spec.w_shape).astype(np.float64)
        b = np.zeros(spec.b_shape, dtype=np.float64)
        slices[spec.name + ".w"] = slice(offset, offset + w.size)
        offset += w.size
        slices[spec.name + ".b"] = slice(offset, offset + b.size)
        offset += b.size
        chunks.append(w.ravel())
        chunks.append(b.ravel())
    theta = np.concatenate(chunks).astype(dtype)
    descriptor = {
        "arch": arch,
        "input": list(input_shape),
        "classes": int(num_classes),
        "channels": [int(c) for c in channels],
        "seed": int(seed),
        "layers": {
            spec.name: {"w": list(spec.w_shape), "b": list(spec.b_shape)}
            for spec in layers
            if spec.param_count
        },
    }
    return ModelParams(descriptor=descriptor, layers=layers, theta=theta, slices=slices)


# ---------------------------------------------------------------------------
# Layer forward/backward
# ---------------------------------------------------------------------------


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    batch, h, width, cin = x.shape
    cout = w.shape[-1]
    xpad = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xpad, (3, 3), axis=(1, 2))  # (B, H, W, C, 3, 3)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(batch, h, width, 9 * cin)
    y = cols @ w.reshape(9 * cin, cout) + b
    return y, (cols, x.shape)


def _conv_backward(dy: np.ndarray, cache, w: np.ndarray):
    cols, x_shape = cache
    batch, h, width, cin = x_shape
    cout = w.shape[-1]
    wmat = w.reshape(9 * cin, cout)
    dy_flat = dy.reshape(-1, cout)
    dw = (cols.reshape(-1, 9 * cin).T @ dy_flat).reshape(w.shape)
    db = dy_flat.sum(axis=0)
    dcols = (dy_flat @ wmat.T).reshape(batch, h, width, 3, 3, cin)
    dxpad = np.zeros((batch, h + 2, width + 2, cin), dtype=dy.dtype)
    for ky in range(3):
        for kx in range(3):
            dxpad[:, ky : ky + h, kx : kx + width, :] += dcols[:, :, :, ky, kx, :]
    dx = dxpad[:, 1 : h + 1, 1 : width + 1, :]
    return dx, dw, db


def _maxpool_forward(x: np.ndarray):
    batch, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    win = x.reshape(batch, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    flat = np.ascontiguousarray(win).reshape(batch, h // 2, w // 2, c, 4)
    idx = flat.argmax(axis=-1)  # first maximum wins ties
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def _maxpool_backward(dy: np.ndarray, cache):
    idx, x_shape = cache
    batch, h, w, c = x_shape
    dflat = np.zeros((batch, h // 2, w // 2, c, 4), dtype=dy.dtype)
    np.put_along_axis(dflat, idx[..., None], dy[..., None], axis=-1)
    dwin = dflat.reshape(batch, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(dwin).reshape(x_shape)


def _forward_layers(params: ModelParams, x: np.ndarray, keep_caches: bool):
    caches: list = []
    for spec in params.layers:
        if spec.kind == "conv3x3":
            x, cache = _conv_forward(x, params.param(spec.name + ".w"), params.param(spec.name + ".b"))
        elif spec.kind == "relu":
            cache = x > 0
            x = np.maximum(x, 0)
        elif spec.kind == "maxpool2":
            x, cache = _maxpool_forward(x)
        elif spec.kind == "gap":
            cache = x.shape
            x = x.mean(axis=(1, 2))
        elif spec.kind == "flatten":
            cache = x.shape
            x = x.reshape(x.shape[0], -1)
        elif spec.kind == "linear":
            cache = x
            x = x @ params.param(spec.name + ".w") + params.param(spec.name + ".b")
        else:  # pragma: no cover - specs are built internally
            raise ValueError(f"unknown layer kind {spec.kind!r}")
        if keep_caches:
            caches.append(cache)
    return x, caches


def _prepare_batch(params: ModelParams, images: np.ndarray) -> np.ndarray:
    x = np.asarray(images)
    if x.ndim != 4 or tuple(x.shape[1:]) != params.input_shape:
        raise ValueError(
            f"expected batch of shape (B, {params.input_shape[0]}, "
            f"{params.input_shape[1]}, {params.input_shape[2]}), got {x.shape}"
        )
    # unit-interval pixels are centered to [-0.5, 0.5] for conditioning
    return x.astype(params.theta.dtype) - params.theta.dtype.type(0.5)


def forward(params: ModelParams, images: np.ndarray) -> np.ndarray:
    """Logits of shape (batch, num_classes)."""
    x = _prepare_batch(params, images)
    logits, _ = _forward_layers(params, x, keep_caches=False)
    return logits


def forward_trace(params: ModelParams, images: np.ndarray) -> list[tuple[str, np.ndarray]]:
    """Per-layer input activations, for inspection and gradient-check hygiene.

    Finite-difference checks are only valid away from the relu/maxpool kinks;
    the trace lets a caller measure how close an instance sits to one.
    """
    x = _prepare_batch(params, images)
    trace: list[tuple[str, np.ndarray]] = []
    for spec in params.layers:
        trace.append((spec.name, x))
        x, _ = _forward_layers(
            replace(params, layers=[spec]), x, keep_caches=False
        )
    trace.append(("logits", x))
    return trace


def _check_targets(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ValueError(f"targets {targets.shape} do not match logits {logits.shape}")
    sums = targets.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6) or targets.min() < -1e-12:
        raise ValueError("targets must be probability vectors over the classes")
    return targets


def soft_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean over the batch of -sum_k t_k log softmax(z)_k (log-sum-exp stabilized)."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = _check_targets(logits, targets)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    # sum_k t_k (logZ - z_k) with sum_k t_k = 1
    per_sample = log_z - (targets * shifted).sum(axis=1)
    return float(per_sample.mean())


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def compute_gradients(
    params: ModelParams, images: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Loss and the flat gradient of soft_cross_entropy; frozen slices are zero."""
    x = _prepare_batch(params, images)
    logits, caches = _forward_layers(params, x, keep_caches=True)
    logits64 = logits.astype(np.float64)
    targets = _check_targets(logits64, targets)
    loss = soft_cross_entropy(logits64, targets)
    batch = logits.shape[0]
    dx = ((_softmax(logits64) - targets) / batch).astype(params.theta.dtype)

    grad = np.zeros_like(params.theta)
    for spec, cache in zip(reversed(params.layers), reversed(caches)):
        if spec.kind == "conv3x3":
            dx, dw, db = _conv_backward(dx, cache, params.param(spec.name + ".w"))
            grad[params.slices[spec.name + ".w"]] = dw.ravel()
            grad[params.slices[spec.name + ".b"]] = db.ravel()
        elif spec.kind == "relu":
            dx = dx * cache
        elif spec.kind == "maxpool2":
            dx = _maxpool_backward(dx, cache)
        elif spec.kind == "gap":
            b, h, w, c = cache
            dx = np.broadcast_to(dx[:, None, None, :] / (h * w), cache).astype(dx.dtype)
        elif spec.kind == "flatten":
            dx = dx.reshape(cache)
        elif spec.kind == "linear":
            x_in = cache
            grad[params.slices[spec.name + ".w"]] = (x_in.T @ dx).ravel()
            grad[params.slices[spec.name + ".b"]] = dx.sum(axis=0)
            dx = dx @ params.param(spec.name + ".w").T
    if params.frozen:
        grad[~params.trainable_mask()] = 0
    return loss, grad


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: ModelParams, path: Path | str) -> None:
    """magic, version, length-prefixed descriptor JSON, f32 LE weights, CRC32."""
    desc = json.dumps(params.descriptor, sort_keys=True).encode("utf-8")
    payload = params.theta.astype("<f4").tobytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    blob = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", CHECKPOINT_VERSION)
        + struct.pack("<I", len(desc))
        + desc
        + payload
        + struct.pack("<I", crc)
    )
    Path(path).write_bytes(blob)


def load_checkpoint(path: Path | str) -> ModelParams:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {blob[:4]!r}")
    if len(blob) < 12:
        raise CheckpointError("truncated checkpoint header")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (desc_len,) = struct.unpack("<I", blob[8:12])
    desc_end = 12 + desc_len
    if len(blob) < desc_end + 4:
        raise CheckpointError("truncated checkpoint descriptor")
    try:
        descriptor = json.loads(blob[12:desc_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"bad checkpoint descriptor: {exc}") from None
    payload = blob[desc_end:-4]
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint payload CRC mismatch")

    h, w, c = descriptor["input"]
    layers = build_layers(
        descriptor["arch"], (h, w, c), descriptor["classes"], tuple(descriptor["channels"])
    )
    expected = count_params(layers)
    theta = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    if theta.size != expected:
        raise CheckpointError(
            f"descriptor mismatch: payload holds {theta.size} weights, "
            f"architecture needs {expected}"
        )
    declared = descriptor.get("layers", {})
    slices: dict[str, slice] = {}
    offset = 0
    for spec in layers:
        if not spec.param_count:
            continue
        shapes = declared.get(spec.name)
        if shapes is not None and (
            tuple(shapes["w"]) != spec.w_shape or tuple(shapes["b"]) != spec.b_shape
        ):
            raise CheckpointError(f"descriptor mismatch: layer {spec.name} shapes differ")
        wsize = int(np.prod(spec.w_shape))
        bsize = int(np.prod(spec.b_shape))
        slices[spec.name + ".w"] = slice(offset, offset + wsize)
        offset += wsize
        slices[spec.name + ".b"] = slice(offset, offset + bsize)
        offset += bsize
    return ModelParams(descriptor=descriptor, layers=layers, theta=theta, slices=slices)
