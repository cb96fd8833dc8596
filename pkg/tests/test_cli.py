import json

import numpy as np
import pytest

from occlubench import codec
from occlubench.cli import run
from occlubench.dataset import load_manifest


@pytest.fixture(scope="module")
def demo_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_demo")
    code = run(
        [
            "demo-dataset", "--out", str(root / "data"), "--classes", "3",
            "--per-class", "8", "--size", "16", "--seed", "5",
        ]
    )
    assert code == 0
    return root


def test_demo_dataset_writes_images_and_manifest(demo_root):
    manifest = load_manifest(demo_root / "data" / "manifest.csv")
    assert len(manifest.samples) == 24
    assert manifest.num_classes == 3
    img = codec.decode_image((demo_root / "data" / manifest.samples[0].path).read_bytes())
    assert img.shape == (16, 16, 3)


def test_prepare_split_counts(demo_root, capsys):
    code = run(
        [
            "prepare-split", "--manifest", str(demo_root / "data" / "manifest.csv"),
            "--min-per-class", "5", "--val", "3", "--test", "2", "--seed", "7",
            "--out", str(demo_root / "split.json"),
        ]
    )
    assert code == 0
    doc = json.loads((demo_root / "split.json").read_text())
    assert doc["seed"] == 7
    assert len(doc["val"]) == 9 and len(doc["test"]) == 6 and len(doc["train"]) == 9
    assert "train=9" in capsys.readouterr().out


def test_apply_masks_cardinality(demo_root):
    run(
        [
            "prepare-split", "--manifest", str(demo_root / "data" / "manifest.csv"),
            "--min-per-class", "5", "--val", "3", "--test", "2", "--seed", "7",
            "--out", str(demo_root / "split.json"),
        ]
    )
    code = run(
        [
            "apply-masks", "--manifest", str(demo_root / "data" / "manifest.csv"),
            "--split", str(demo_root / "split.json"), "--part", "test",
            "--mask", "6", "--seed", "7", "--out", str(demo_root / "occl6"),
        ]
    )
    assert code == 0
    occluded = load_manifest(demo_root / "occl6" / "manifest.csv")
    assert len(occluded.samples) == 6  # one occluded image per test sample
    assert (demo_root / "occl6" / "masks.json").exists()


def test_synth_masks_writes_all_eight(tmp_path):
    code = run(["synth-masks", "--height", "32", "--width", "32", "--out", str(tmp_path / "m")])
    assert code == 0
    for kind in range(1, 9):
        assert (tmp_path / "m" / f"mask{kind}.pgm").exists()


def test_unknown_subcommand_exits_one(capsys):
    assert run(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_exits_one(capsys):
    assert run(["demo-dataset", "--bogus", "1"]) == 1
    assert "usage" in capsys.readouterr().err


def test_no_subcommand_exits_one():
    assert run([]) == 1


def test_help_exits_zero():
    assert run(["--help"]) == 0


def test_missing_manifest_exits_two(tmp_path):
    code = run(
        ["prepare-split", "--manifest", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "s.json")]
    )
    assert code == 2


def test_config_file_supplies_values_and_flags_override(demo_root, tmp_path):
    config = {"classes": 2, "per_class": 3, "size": 16, "seed": 9}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config))
    code = run(
        ["demo-dataset", "--config", str(cfg_path), "--out", str(tmp_path / "d"), "--classes", "4"]
    )
    assert code == 0
    manifest = load_manifest(tmp_path / "d" / "manifest.csv")
    assert manifest.num_classes == 4  # flag beat the config file
    assert len(manifest.samples) == 12  # per_class came from the config


def test_unknown_config_key_exits_two(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"classses": 2}))
    assert run(["demo-dataset", "--config", str(cfg_path), "--out", str(tmp_path / "d")]) == 2


def test_env_var_provides_default_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("OCCLUBENCH_SEED", "31")
    run(["demo-dataset", "--out", str(tmp_path / "a"), "--classes", "2", "--per-class", "2", "--size", "16"])
    monkeypatch.setenv("OCCLUBENCH_SEED", "32")
    run(["demo-dataset", "--out", str(tmp_path / "b"), "--classes", "2", "--per-class", "2", "--size", "16"])
    a = load_manifest(tmp_path / "a" / "manifest.csv")
    b = load_manifest(tmp_path / "b" / "manifest.csv")
    img_a = (tmp_path / "a" / a.samples[0].path).read_bytes()
    img_b = (tmp_path / "b" / b.samples[0].path).read_bytes()
    assert img_a != img_b


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("flow")
    run(
        ["demo-dataset", "--out", str(root / "data"), "--classes", "3",
         "--per-class", "8", "--size", "16", "--seed", "3"]
    )
    run(
        ["prepare-split", "--manifest", str(root / "data" / "manifest.csv"),
         "--min-per-class", "5", "--val", "2", "--test", "2", "--seed", "3",
         "--out", str(root / "split.json")]
    )
    config = {
        "epochs_frozen": 1, "epochs_unfrozen": 2, "batch_size": 8,
        "max_lr": 0.05, "target_size": 16, "channels": [4, 8, 8], "seed": 3,
    }
    (root / "train.json").write_text(json.dumps(config))
    code = run(
        ["train", "--manifest", str(root / "data" / "manifest.csv"),
         "--split", str(root / "split.json"), "--config", str(root / "train.json"),
         "--out-checkpoint", str(root / "model.bin"),
         "--out-history", str(root / "history.json")]
    )
    assert code == 0
    return root


def test_history_written(trained):
    doc = json.loads((trained / "history.json").read_text())
    assert len(doc["epochs"]) == 3


def test_repeat_training_byte_identical_checkpoint(trained):
    code = run(
        ["train", "--manifest", str(trained / "data" / "manifest.csv"),
         "--split", str(trained / "split.json"), "--config", str(trained / "train.json"),
         "--out-checkpoint", str(trained / "model2.bin")]
    )
    assert code == 0
    assert (trained / "model.bin").read_bytes() == (trained / "model2.bin").read_bytes()


def test_evaluate_and_report(trained):
    code = run(
        ["evaluate", "--checkpoint", str(trained / "model.bin"),
         "--condition", f"clean={trained / 'data' / 'manifest.csv'}",
         "--target-size", "16", "--out", str(trained / "rep")]
    )
    assert code == 0
    report = json.loads((trained / "rep" / "report.json").read_text())
    assert report["conditions"][0]["id"] == "clean"
    assert (trained / "rep" / "chart.svg").exists()
    code = run(
        ["report", "--report", str(trained / "rep" / "report.json"),
         "--report", str(trained / "rep" / "report.json"),
         "--out", str(trained / "cmp")]
    )
    assert code == 0
    cmp_doc = json.loads((trained / "cmp" / "comparison.json").read_text())
    assert len(cmp_doc["models"]) == 2


def test_inpaint_subcommand(trained):
    run(
        ["apply-masks", "--manifest", str(trained / "data" / "manifest.csv"),
         "--split", str(trained / "split.json"), "--part", "test", "--mask", "1",
         "--seed", "4", "--out", str(trained / "occl1")]
    )
    code = run(
        ["inpaint", "--manifest", str(trained / "occl1" / "manifest.csv"),
         "--strategy", "mirror_then_harmonic", "--out", str(trained / "rec1")]
    )
    assert code == 0
    recovered = load_manifest(trained / "rec1" / "manifest.csv")
    assert len(recovered.samples) == 6
    img = codec.decode_image((trained / "rec1" / recovered.samples[0].path).read_bytes())
    assert np.all(np.isfinite(img))


def test_lr_find_subcommand(trained, capsys):
    code = run(
        ["lr-find", "--manifest", str(trained / "data" / "manifest.csv"),
         "--split", str(trained / "split.json"), "--batch-size", "8",
         "--target-size", "16", "--seed", "3", "--num-iters", "30",
         "--out", str(trained / "lr.csv")]
    )
    assert code == 0
    assert "suggested max_lr" in capsys.readouterr().out
    assert (trained / "lr.csv").read_text().startswith("lr,smoothed_loss")
