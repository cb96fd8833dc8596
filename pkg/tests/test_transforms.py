import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occlubench.rng import derive
from occlubench.transforms import (
    DEFAULT_AUGMENT,
    IDENTITY_AUGMENT,
    AugmentParams,
    adjust_lighting,
    affine_transform,
    apply_augmentation,
    hflip,
    resize_bilinear,
    sample_augmentation,
)


def random_image(seed=0, shape=(9, 7, 3)):
    return np.random.default_rng(seed).random(shape)


class TestResize:
    def test_constant_image_stays_constant(self):
        img = np.full((5, 8, 3), 0.37)
        out = resize_bilinear(img, 11, 3)
        assert out.shape == (11, 3, 3)
        assert np.allclose(out, 0.37)

    def test_identity_when_dims_match(self):
        img = random_image()
        assert np.array_equal(resize_bilinear(img, 9, 7), img)

    def test_checkerboard_to_single_pixel_averages(self):
        # hand-computed: the 1x1 output samples the exact center, the
        # bilinear blend of all four pixels -> (0+1+1+0)/4
        img = np.array([[[0.0], [1.0]], [[1.0], [0.0]]])
        out = resize_bilinear(img, 1, 1)
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == pytest.approx(0.5, abs=1e-12)

    def test_zero_target_rejected(self):
        with pytest.raises(ValueError):
            resize_bilinear(random_image(), 0, 4)

    def test_output_within_input_range(self):
        img = random_image(3)
        out = resize_bilinear(img, 4, 13)
        assert out.min() >= img.min() - 1e-12
        assert out.max() <= img.max() + 1e-12


class TestAffine:
    def test_identity_parameters(self):
        img = random_image(1)
        out = affine_transform(img, 0.0, 1.0, 0.0)
        assert np.abs(out - img).max() <= 1e-6

    def test_full_turn_equals_identity(self):
        img = random_image(2)
        out = affine_transform(img, 360.0, 1.0, 0.0)
        assert np.abs(out - img).max() <= 1e-6

    def test_zoom_of_constant_is_constant(self):
        img = np.full((8, 8, 1), 0.25)
        out = affine_transform(img, 0.0, 1.1, 0.0)
        assert np.allclose(out, 0.25)

    def test_preserves_shape_and_range(self):
        img = random_image(4, (12, 5, 1))
        out = affine_transform(img, -8.3, 1.07, 0.04)
        assert out.shape == img.shape
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestLighting:
    def test_identity(self):
        img = random_image(5)
        assert np.array_equal(adjust_lighting(img, 0.0, 1.0), img)

    def test_mid_grey_is_contrast_fixed_point(self):
        img = np.full((2, 2, 1), 0.5)
        assert np.allclose(adjust_lighting(img, 0.0, 7.3), 0.5)

    def test_brightness_saturates(self):
        img = np.full((1, 1, 1), 0.9)
        assert adjust_lighting(img, 0.2, 1.0)[0, 0, 0] == 1.0


class TestHflip:
    def test_involution_exact(self):
        img = random_image(6)
        assert np.array_equal(hflip(hflip(img)), img)

    def test_flips_columns(self):
        img = np.arange(6, dtype=np.float64).reshape(1, 6, 1) / 6
        assert np.array_equal(hflip(img)[0, :, 0], img[0, ::-1, 0])


class TestAugmentation:
    def test_same_stream_draws_identical_params(self):
        a = sample_augmentation(derive(9, 1))
        b = sample_augmentation(derive(9, 1))
        assert a == b

    def test_distinct_streams_differ(self):
        assert sample_augmentation(derive(9, 1)) != sample_augmentation(derive(9, 2))

    def test_identity_params_do_nothing(self):
        img = random_image(8)
        out = apply_augmentation(img, IDENTITY_AUGMENT)
        assert np.abs(out - img).max() <= 1e-6

    def test_double_hflip_is_exact_identity(self):
        img = random_image(9)
        flip_only = AugmentParams(hflip=True)
        assert np.array_equal(
            apply_augmentation(apply_augmentation(img, flip_only), flip_only), img
        )

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_samples_stay_in_ranges(self, seed):
        p = sample_augmentation(derive(seed, 0), DEFAULT_AUGMENT)
        assert -10.0 <= p.rotation <= 10.0
        assert 1.0 <= p.zoom <= 1.1
        assert -0.05 <= p.shear <= 0.05
        assert -0.1 <= p.brightness <= 0.1
        assert 0.9 <= p.contrast <= 1.1

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_output_in_unit_interval_and_same_shape(self, seed):
        img = random_image(seed % 17, (8, 8, 3))
        p = sample_augmentation(derive(seed, 0))
        out = apply_augmentation(img, p)
        assert out.shape == img.shape
        assert out.min() >= 0.0 and out.max() <= 1.0
