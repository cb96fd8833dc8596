"""Command-line entry point.

Subcommands map one-to-one onto the batch operations of the library:

  demo-dataset   render the synthetic identity dataset
  prepare-split  filter a manifest and write a stratified split
  synth-masks    rasterize the eight mask families for inspection
  apply-masks    build an occluded copy of a split part
  inpaint        recover an occluded dataset from its mask sidecars
  lr-find        learning-rate range sweep on a throwaway model
  train          train a classifier (optionally with Cutmix)
  evaluate       measure top-1/top-5 error over named conditions
  report         compare several evaluation reports

Every subcommand accepts --config FILE (JSON mirroring the long flag names,
underscores for dashes); explicit flags override config values, and the
fully resolved configuration is logged to stderr. OCCLUBENCH_SEED provides
the default seed. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import demo, inpaint, masks, nn, report as report_mod, trainer
from .dataset import (
    DatasetManifest,
    filter_min_images,
    iterate_batches,
    load_manifest,
    load_split,
    save_split,
    stratified_split,
)
from .errors import OcclubenchError
from .evaluate import EvalReport, compare_models, evaluate_condition
from .rng import NS_MASK, derive

logger = logging.getLogger("occlubench")

USAGE_ERROR = 1
DATA_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(USAGE_ERROR)


def _default_seed() -> int:
    try:
        return int(os.environ.get("OCCLUBENCH_SEED", "0"))
    except ValueError:
        return 0


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise OcclubenchError(f"config {path} must hold a JSON object")
    return doc


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """flags > config file > defaults; logs the resolved configuration."""
    config = _load_config(getattr(args, "config", None))
    unknown = set(config) - set(defaults)
    if unknown:
        raise OcclubenchError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in config:
            resolved[key] = config[key]
        else:
            resolved[key] = default
    logger.info("resolved config: %s", json.dumps(resolved, sort_keys=True, default=str))
    return resolved


def _part_manifest(manifest: DatasetManifest, split_path: str | None, part: str) -> DatasetManifest:
    if split_path is None:
        return manifest
    split = load_split(split_path, manifest)
    return DatasetManifest(
        samples=split.part(part), classes=list(manifest.classes), root=manifest.root
    )


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def _cmd_demo_dataset(args) -> int:
    cfg = _resolve(args, {"out": None, "classes": 20, "per_class": 25, "size": 32, "seed": _default_seed()})
    if not cfg["out"]:
        raise OcclubenchError("demo-dataset needs --out")
    manifest = demo.write_demo_dataset(
        cfg["out"], classes=int(cfg["classes"]), per_class=int(cfg["per_class"]),
        size=int(cfg["size"]), seed=int(cfg["seed"]),
    )
    print(f"wrote {len(manifest.samples)} images, manifest at {Path(cfg['out']) / 'manifest.csv'}")
    return 0


def _cmd_prepare_split(args) -> int:
    cfg = _resolve(
        args,
        {"manifest": None, "min_per_class": 15, "val": 3, "test": 2, "seed": _default_seed(), "out": None},
    )
    if not cfg["manifest"] or not cfg["out"]:
        raise OcclubenchError("prepare-split needs --manifest and --out")
    manifest = load_manifest(cfg["manifest"])
    filtered = filter_min_images(manifest, int(cfg["min_per_class"]))
    split = stratified_split(filtered, int(cfg["val"]), int(cfg["test"]), int(cfg["seed"]))
    save_split(split, cfg["out"])
    print(
        f"classes={filtered.num_classes} train={len(split.train)} "
        f"val={len(split.val)} test={len(split.test)} -> {cfg['out']}"
    )
    return 0


def _cmd_synth_masks(args) -> int:
    cfg = _resolve(
        args, {"height": 128, "width": 128, "seed": _default_seed(), "out": None, "kinds": "1,2,3,4,5,6,7,8"}
    )
    if not cfg["out"]:
        raise OcclubenchError("synth-masks needs --out")
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for kind in (int(k) for k in str(cfg["kinds"]).split(",")):
        mask = masks.generate_mask(
            kind, int(cfg["height"]), int(cfg["width"]), derive(int(cfg["seed"]), NS_MASK, kind)
        )
        name = f"mask{kind}.pgm"
        (out_dir / name).write_bytes(masks.mask_to_sidecar(mask))
        entries.append({"sample": name, "kind": kind, "side": mask.side, "seed": int(cfg["seed"])})
        print(f"mask {kind}: side={mask.side} coverage={masks.mask_area_fraction(mask):.3f}")
    (out_dir / "masks.json").write_text(
        json.dumps({"entries": entries, "seed": int(cfg["seed"])}, indent=2, sort_keys=True) + "\n"
    )
    return 0


def _cmd_apply_masks(args) -> int:
    cfg = _resolve(
        args,
        {
            "manifest": None, "split": None, "part": "test", "mask": None,
            "seed": _default_seed(), "out": None, "threads": os.cpu_count() or 1,
        },
    )
    if not cfg["manifest"] or cfg["mask"] is None or not cfg["out"]:
        raise OcclubenchError("apply-masks needs --manifest, --mask and --out")
    manifest = load_manifest(cfg["manifest"])
    part = _part_manifest(manifest, cfg["split"], str(cfg["part"]))
    result = masks.occlude_dataset(
        part, int(cfg["mask"]), int(cfg["seed"]), Path(cfg["out"]), threads=int(cfg["threads"])
    )
    print(f"occluded {len(result.samples)} images into {cfg['out']}")
    return 0


def _cmd_inpaint(args) -> int:
    cfg = _resolve(
        args,
        {
            "manifest": None, "mask_dir": None, "strategy": "mirror_then_harmonic",
            "tol": 1e-5, "max_iters": 10_000, "out": None, "threads": os.cpu_count() or 1,
        },
    )
    if not cfg["manifest"] or not cfg["out"]:
        raise OcclubenchError("inpaint needs --manifest and --out")
    manifest = load_manifest(cfg["manifest"])
    strategy = inpaint.RecoveryStrategy(
        kind=str(cfg["strategy"]), tol=float(cfg["tol"]), max_iters=int(cfg["max_iters"])
    )
    mask_dir = Path(cfg["mask_dir"]) if cfg["mask_dir"] else None
    result = inpaint.recover_dataset(
        manifest, strategy, Path(cfg["out"]), mask_dir=mask_dir, threads=int(cfg["threads"])
    )
    print(f"recovered {len(result.samples)} images into {cfg['out']}")
    return 0


def _train_config(cfg: dict) -> trainer.TrainConfig:
    fields = {k: v for k, v in cfg.items() if k in trainer.TrainConfig.__dataclass_fields__}
    return trainer.TrainConfig.from_dict(fields)


_TRAIN_DEFAULTS = {
    "manifest": None,
    "split": None,
    **{k: None for k in trainer.TrainConfig.__dataclass_fields__},
}


def _resolved_train_setup(args) -> tuple[dict, trainer.TrainConfig, "DatasetManifest"]:
    defaults = dict(_TRAIN_DEFAULTS)
    base = trainer.TrainConfig()
    for k in trainer.TrainConfig.__dataclass_fields__:
        defaults[k] = getattr(base, k)
    defaults["seed"] = _default_seed()
    cfg = _resolve(args, defaults)
    if not cfg["manifest"] or not cfg["split"]:
        raise OcclubenchError("need --manifest and --split")
    manifest = load_manifest(cfg["manifest"])
    return cfg, _train_config(cfg), manifest


def _cmd_lr_find(args) -> int:
    defaults = {
        "manifest": None, "split": None, "batch_size": 64, "target_size": 32,
        "seed": _default_seed(), "arch": "smallconv", "start_lr": 1e-7, "end_lr": 10.0,
        "num_iters": 100, "out": None,
    }
    cfg = _resolve(args, defaults)
    if not cfg["manifest"] or not cfg["split"]:
        raise OcclubenchError("lr-find needs --manifest and --split")
    manifest = load_manifest(cfg["manifest"])
    split = load_split(cfg["split"], manifest)
    batches = list(
        iterate_batches(
            split.train, manifest, batch_size=int(cfg["batch_size"]),
            epoch_seed=int(cfg["seed"]), target_size=int(cfg["target_size"]),
        )
    )
    probe = batches[0][0]
    params = nn.init_model(
        str(cfg["arch"]), manifest.num_classes, int(cfg["seed"]),
        input_size=int(cfg["target_size"]), in_channels=probe.shape[3],
    )
    suggestion, curve = trainer.lr_find(
        params, batches, start_lr=float(cfg["start_lr"]), end_lr=float(cfg["end_lr"]),
        num_iters=int(cfg["num_iters"]),
    )
    if cfg["out"]:
        lines = ["lr,smoothed_loss"] + [f"{lr!r},{loss!r}" for lr, loss in curve]
        Path(cfg["out"]).write_text("\n".join(lines) + "\n")
    print(f"suggested max_lr: {suggestion:g}")
    return 0


def _cmd_train(args) -> int:
    cfg, tcfg, manifest = _resolved_train_setup(args)
    split = load_split(cfg["split"], manifest)
    params, history = trainer.train(split, tcfg)
    out_ckpt = getattr(args, "out_checkpoint", None) or "checkpoint.bin"
    nn.save_checkpoint(params, out_ckpt)
    if getattr(args, "out_history", None):
        history.save(args.out_history)
    best = min((e.val_error for e in history.epochs), default=float("nan"))
    print(f"trained {len(history.steps)} steps, best val top-1 error {best:.4f} -> {out_ckpt}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _resolve(
        args,
        {"checkpoint": None, "target_size": 32, "out": None, "conditions": []},
    )
    conditions = list(cfg["conditions"] or [])
    if getattr(args, "condition", None):
        conditions = args.condition
    if not cfg["checkpoint"] or not conditions or not cfg["out"]:
        raise OcclubenchError("evaluate needs --checkpoint, --condition NAME=MANIFEST..., --out")
    params = nn.load_checkpoint(cfg["checkpoint"])
    meta = {
        "arch": params.descriptor.get("arch"),
        "cutmix": bool(params.descriptor.get("cutmix", False)),
        "seed": params.descriptor.get("seed"),
    }
    rep = EvalReport(model=meta, chance_level=1.0 - 1.0 / params.num_classes)
    for spec in conditions:
        name, _, manifest_path = str(spec).partition("=")
        if not manifest_path:
            raise OcclubenchError(f"condition {spec!r} must look like NAME=MANIFEST.csv")
        manifest = load_manifest(manifest_path)
        rep.add(evaluate_condition(params, manifest, name, int(cfg["target_size"])))
        print(f"{name}: top1={rep.get(name).top1_error:.4f} top5={rep.get(name).top5_error:.4f}")
    paths = report_mod.write_report(rep, cfg["out"])
    print(f"report -> {paths['json']}")
    return 0


def _cmd_report(args) -> int:
    cfg = _resolve(args, {"reports": [], "out": None})
    paths = list(cfg["reports"] or [])
    if getattr(args, "report", None):
        paths = args.report
    if not paths or not cfg["out"]:
        raise OcclubenchError("report needs --report FILE... and --out")
    reports = [report_mod.load_report(p) for p in paths]
    comparison = compare_models(reports)
    written = report_mod.write_comparison(comparison, cfg["out"])
    print(f"comparison -> {written['json']}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="occlubench", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")

    def add(name: str, func, flags: list[tuple[str, dict]]):
        p = sub.add_parser(name, parents=[], conflict_handler="resolve")
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON config file mirroring the flags")
        for flag, kwargs in flags:
            p.add_argument(flag, **kwargs)
        return p

    add("demo-dataset", _cmd_demo_dataset, [
        ("--out", {}),
        ("--classes", {"type": int}),
        ("--per-class", {"type": int, "dest": "per_class"}),
        ("--size", {"type": int}),
        ("--seed", {"type": int}),
    ])
    add("prepare-split", _cmd_prepare_split, [
        ("--manifest", {}),
        ("--min-per-class", {"type": int, "dest": "min_per_class"}),
        ("--val", {"type": int}),
        ("--test", {"type": int}),
        ("--seed", {"type": int}),
        ("--out", {}),
    ])
    add("synth-masks", _cmd_synth_masks, [
        ("--height", {"type": int}),
        ("--width", {"type": int}),
        ("--seed", {"type": int}),
        ("--kinds", {}),
        ("--out", {}),
    ])
    add("apply-masks", _cmd_apply_masks, [
        ("--manifest", {}),
        ("--split", {}),
        ("--part", {"choices": ["train", "val", "test"]}),
        ("--mask", {"type": int}),
        ("--seed", {"type": int}),
        ("--threads", {"type": int}),
        ("--out", {}),
    ])
    add("inpaint", _cmd_inpaint, [
        ("--manifest", {}),
        ("--mask-dir", {"dest": "mask_dir"}),
        ("--strategy", {"choices": list(inpaint.STRATEGIES)}),
        ("--tol", {"type": float}),
        ("--max-iters", {"type": int, "dest": "max_iters"}),
        ("--threads", {"type": int}),
        ("--out", {}),
    ])
    add("lr-find", _cmd_lr_find, [
        ("--manifest", {}),
        ("--split", {}),
        ("--batch-size", {"type": int, "dest": "batch_size"}),
        ("--target-size", {"type": int, "dest": "target_size"}),
        ("--seed", {"type": int}),
        ("--arch", {}),
        ("--start-lr", {"type": float, "dest": "start_lr"}),
        ("--end-lr", {"type": float, "dest": "end_lr"}),
        ("--num-iters", {"type": int, "dest": "num_iters"}),
        ("--out", {}),
    ])
    add("train", _cmd_train, [
        ("--manifest", {}),
        ("--split", {}),
        ("--arch", {}),
        ("--epochs-frozen", {"type": int, "dest": "epochs_frozen"}),
        ("--epochs-unfrozen", {"type": int, "dest": "epochs_unfrozen"}),
        ("--batch-size", {"type": int, "dest": "batch_size"}),
        ("--max-lr", {"type": float, "dest": "max_lr"}),
        ("--cutmix", {"action": "store_const", "const": True, "dest": "cutmix_enabled"}),
        ("--cutmix-alpha", {"type": float, "dest": "cutmix_alpha"}),
        ("--no-augment", {"action": "store_const", "const": False, "dest": "augment"}),
        ("--seed", {"type": int}),
        ("--target-size", {"type": int, "dest": "target_size"}),
        ("--out-checkpoint", {"dest": "out_checkpoint"}),
        ("--out-history", {"dest": "out_history"}),
    ])
    add("evaluate", _cmd_evaluate, [
        ("--checkpoint", {}),
        ("--condition", {"action": "append", "metavar": "NAME=MANIFEST"}),
        ("--target-size", {"type": int, "dest": "target_size"}),
        ("--out", {}),
    ])
    add("report", _cmd_report, [
        ("--report", {"action": "append", "metavar": "REPORT_JSON"}),
        ("--out", {}),
    ])
    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # bad flag/subcommand (1) or --help (0)
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    np.seterr(over="ignore")  # training losses may briefly overflow in sweeps
    try:
        return args.func(args)
    except SystemExit:
        raise
    except OcclubenchError as exc:
        sys.stderr.write(f"occlubench: error: {exc}\n")
        return DATA_ERROR
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"occlubench: error: {exc}\n")
        return DATA_ERROR


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
