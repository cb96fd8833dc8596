import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occlubench import codec, demo
from occlubench.dataset import DatasetManifest, load_manifest
from occlubench.masks import (
    DEFAULT_GEOMETRY,
    MaskBitmap,
    apply_mask,
    generate_mask,
    mask_area_fraction,
    mask_to_sidecar,
    occlude_dataset,
    sidecar_to_mask,
)
from occlubench.rng import derive
from occlubench.transforms import hflip


def rng(seed=0):
    return derive(seed, 99)


@pytest.mark.parametrize("res", [64, 128, 512])
def test_masks_7_and_8_partition_the_grid(res):
    bits7 = generate_mask(7, res, res).bits
    bits8 = generate_mask(8, res, res).bits
    assert np.array_equal(bits7, ~bits8)
    assert np.all(bits7 | bits8)
    assert not np.any(bits7 & bits8)


def test_mask3_fraction_matches_analytic_area():
    # default geometry spans 0.70 x 0.40 of the unit square; the pixel-count
    # oracle at 100x100 allows one row of rasterization slack
    mask = generate_mask(3, 100, 100)
    analytic = 0.70 * 0.40
    assert abs(mask_area_fraction(mask) - analytic) <= 0.01
    assert mask_area_fraction(mask) == np.count_nonzero(mask.bits) / mask.bits.size


@pytest.mark.parametrize("kind", [1, 5])
def test_sided_masks_are_exact_mirrors(kind):
    left = generate_mask(kind, 97, 103, side="left")
    right = generate_mask(kind, 97, 103, side="right")
    flipped = hflip(right.bits.astype(np.float64)[:, :, None])[:, :, 0] > 0.5
    assert np.array_equal(left.bits, flipped)


def test_two_seeds_with_opposite_sides_mirror():
    masks_by_side = {}
    for seed in range(20):
        m = generate_mask(5, 64, 64, derive(seed, 0))
        masks_by_side[m.side] = m
        if len(masks_by_side) == 2:
            break
    assert set(masks_by_side) == {"left", "right"}
    assert np.array_equal(
        masks_by_side["left"].bits, masks_by_side["right"].bits[:, ::-1]
    )


def test_side_draw_is_deterministic_per_stream():
    sides = {generate_mask(1, 8, 8, derive(3, 7)).side for _ in range(5)}
    assert len(sides) == 1


def test_unknown_kind_rejected():
    with pytest.raises(ValueError, match="kind"):
        generate_mask(9, 8, 8, rng())


def test_sided_kind_without_rng_or_side_rejected():
    with pytest.raises(ValueError):
        generate_mask(1, 8, 8)


class TestApplyMask:
    def test_all_false_mask_is_identity(self):
        img = np.random.default_rng(0).random((6, 6, 3))
        mask = MaskBitmap(kind=2, side=None, bits=np.zeros((6, 6), bool))
        assert np.array_equal(apply_mask(img, mask), img)

    def test_all_true_mask_gives_constant_fill(self):
        img = np.random.default_rng(1).random((6, 6, 3))
        mask = MaskBitmap(kind=8, side=None, bits=np.ones((6, 6), bool))
        assert np.all(apply_mask(img, mask, 0.5) == 0.5)

    def test_unmasked_pixels_bit_identical_pixelwise(self):
        img = np.random.default_rng(2).random((64, 64, 3))
        mask = generate_mask(6, 64, 64)
        out = apply_mask(img, mask)
        diff = out != img
        changed = diff.any(axis=2)
        assert not np.any(changed & ~mask.bits)  # nothing outside the mask moved
        assert np.all(out[mask.bits] == 0.5)

    def test_dimension_mismatch_rejected(self):
        img = np.zeros((4, 4, 1))
        mask = MaskBitmap(kind=1, side="left", bits=np.zeros((5, 4), bool))
        with pytest.raises(ValueError, match="dimensions"):
            apply_mask(img, mask)

    @given(st.integers(0, 500))
    @settings(max_examples=25, deadline=None)
    def test_idempotent_and_non_interfering(self, seed):
        r = np.random.default_rng(seed)
        img = r.random((16, 16, 3))
        bits = r.random((16, 16)) < 0.4
        mask = MaskBitmap(kind=6, side=None, bits=bits)
        once = apply_mask(img, mask, 0.5)
        twice = apply_mask(once, mask, 0.5)
        assert np.array_equal(once, twice)
        assert np.array_equal(once[~bits], img[~bits])


class TestAreaFraction:
    def test_trivial_bounds(self):
        empty = MaskBitmap(kind=1, side="left", bits=np.zeros((4, 4), bool))
        full = MaskBitmap(kind=8, side=None, bits=np.ones((4, 4), bool))
        assert mask_area_fraction(empty) == 0.0
        assert mask_area_fraction(full) == 1.0

    @pytest.mark.parametrize("res", [17, 64, 200])
    def test_7_plus_8_sum_to_one(self, res):
        f7 = mask_area_fraction(generate_mask(7, res, res))
        f8 = mask_area_fraction(generate_mask(8, res, res))
        assert f7 + f8 == 1.0


@pytest.mark.parametrize("kind", range(1, 9))
def test_resolution_consistency(kind):
    side = "left" if kind in (1, 5) else None
    f64 = mask_area_fraction(generate_mask(kind, 64, 64, side=side))
    f512 = mask_area_fraction(generate_mask(kind, 512, 512, side=side))
    assert abs(f64 - f512) <= 0.02


class TestOccludeDataset:
    @pytest.fixture()
    def small_dataset(self, tmp_path):
        return demo.write_demo_dataset(tmp_path / "d", classes=2, per_class=3, size=16, seed=5)

    def test_counts_and_labels_preserved(self, small_dataset, tmp_path):
        out = occlude_dataset(small_dataset, 6, seed=3, out_dir=tmp_path / "o")
        assert len(out.samples) == len(small_dataset.samples)
        assert [s.identity for s in out.samples] == [
            s.identity for s in small_dataset.samples
        ]
        reloaded = load_manifest(tmp_path / "o" / "manifest.csv")
        assert len(reloaded.samples) == len(out.samples)

    def test_sidecars_and_index_written(self, small_dataset, tmp_path):
        out = occlude_dataset(small_dataset, 1, seed=3, out_dir=tmp_path / "o")
        index = json.loads((tmp_path / "o" / "masks.json").read_text())
        assert len(index["entries"]) == len(out.samples)
        entry = index["entries"][0]
        assert set(entry) == {"sample", "kind", "side", "seed"}
        assert entry["side"] in ("left", "right")
        sidecar = (tmp_path / "o" / (entry["sample"] + ".mask.pgm")).read_bytes()
        mask = sidecar_to_mask(sidecar, kind=1, side=entry["side"])
        assert mask.bits.any() and not mask.bits.all()

    def test_empty_manifest_writes_nothing(self, tmp_path):
        empty = DatasetManifest(samples=[], classes=["a"], root=tmp_path)
        out = occlude_dataset(empty, 3, seed=0, out_dir=tmp_path / "o")
        assert out.samples == []
        assert not (tmp_path / "o").exists()

    def test_rerun_is_byte_identical(self, small_dataset, tmp_path):
        out1 = occlude_dataset(small_dataset, 5, seed=11, out_dir=tmp_path / "a")
        out2 = occlude_dataset(small_dataset, 5, seed=11, out_dir=tmp_path / "b", threads=4)
        for s1, s2 in zip(out1.samples, out2.samples):
            b1 = (tmp_path / "a" / s1.path).read_bytes()
            b2 = (tmp_path / "b" / s2.path).read_bytes()
            assert b1 == b2
        assert (tmp_path / "a" / "manifest.csv").read_bytes() == (
            tmp_path / "b" / "manifest.csv"
        ).read_bytes()

    def test_occluded_pixels_are_byte_128(self, small_dataset, tmp_path):
        out = occlude_dataset(small_dataset, 8, seed=2, out_dir=tmp_path / "o")
        sample = out.samples[0]
        img = codec.decode_image((tmp_path / "o" / sample.path).read_bytes())
        mask = sidecar_to_mask(
            (tmp_path / "o" / (sample.path + ".mask.pgm")).read_bytes(), kind=8
        )
        assert np.all(img[mask.bits] == 128 / 255)


def test_sidecar_round_trip():
    mask = generate_mask(4, 20, 30)
    back = sidecar_to_mask(mask_to_sidecar(mask), kind=4)
    assert np.array_equal(back.bits, mask.bits)


def test_geometry_override_changes_shape():
    from dataclasses import replace

    geo = replace(DEFAULT_GEOMETRY, nose_box=(0.0, 1.0, 0.0, 1.0))
    mask = generate_mask(2, 10, 10, geometry=geo)
    assert mask_area_fraction(mask) == 1.0
