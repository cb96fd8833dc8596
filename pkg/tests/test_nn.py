import numpy as np
import pytest

from occlubench import nn
from occlubench.errors import CheckpointError


def fd_gradient(params, images, targets, h=1e-5):
    """Central finite differences of the loss over every parameter."""
    grad = np.zeros_like(params.theta)
    for i in range(params.theta.size):
        theta_p = params.theta.copy()
        theta_p[i] += h
        up = nn.soft_cross_entropy(
            nn.forward(nn.ModelParams(params.descriptor, params.layers, theta_p, params.slices), images),
            targets,
        )
        theta_p[i] -= 2 * h
        down = nn.soft_cross_entropy(
            nn.forward(nn.ModelParams(params.descriptor, params.layers, theta_p, params.slices), images),
            targets,
        )
        grad[i] = (up - down) / (2 * h)
    return grad


def gradient_rel_error(analytic, numeric):
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return np.abs(analytic - numeric).max() / scale


def tiny_model(seed, num_classes=3, size=8, channels=(2, 3, 4), in_channels=2):
    return nn.init_model(
        "smallconv", num_classes, seed, input_size=size, in_channels=in_channels,
        channels=channels, dtype=np.float64,
    )


def random_batch(params, batch, seed):
    rng = np.random.default_rng(seed)
    h, w, c = params.input_shape
    images = rng.random((batch, h, w, c))
    labels = rng.dirichlet(np.ones(params.num_classes), size=batch)
    return images, labels


class TestInitModel:
    def test_same_seed_bit_identical(self):
        a = nn.init_model("smallconv", 5, seed=4)
        b = nn.init_model("smallconv", 5, seed=4)
        assert np.array_equal(a.theta, b.theta)

    def test_different_seed_differs(self):
        a = nn.init_model("smallconv", 5, seed=4)
        b = nn.init_model("smallconv", 5, seed=5)
        assert not np.array_equal(a.theta, b.theta)

    def test_final_layer_width_matches_307_classes(self):
        params = nn.init_model("smallconv", 307, seed=0)
        assert params.param("fc.w").shape == (64, 307)
        assert params.param("fc.b").shape == (307,)

    def test_parameter_count_closed_form(self):
        # 32x32x3 smallconv(16,32,64), K classes:
        # conv weights 9*cin*cout + cout biases per conv, then 64*K + K
        k = 11
        params = nn.init_model("smallconv", k, seed=0, input_size=32, in_channels=3)
        expected = (
            (9 * 3 * 16 + 16)
            + (9 * 16 * 32 + 32)
            + (9 * 32 * 64 + 64)
            + (64 * k + k)
        )
        assert params.theta.size == expected
        assert nn.count_params(params.layers) == expected

    def test_biases_start_at_zero(self):
        params = nn.init_model("smallconv", 4, seed=1)
        for name in ("conv1", "conv2", "conv3", "fc"):
            assert np.all(params.param(name + ".b") == 0.0)

    def test_unknown_arch_rejected(self):
        with pytest.raises(ValueError, match="architecture"):
            nn.init_model("resnet999", 4, seed=0)


class TestForward:
    def test_zero_weights_give_zero_logits(self):
        params = tiny_model(0)
        params.theta[:] = 0.0
        images, _ = random_batch(params, 3, 0)
        assert np.all(nn.forward(params, images) == 0.0)

    def test_identical_images_identical_rows(self):
        params = tiny_model(1)
        img = np.random.default_rng(2).random((1, 8, 8, 2))
        batch = np.repeat(img, 4, axis=0)
        logits = nn.forward(params, batch)
        assert np.all(logits == logits[0])

    def test_batch_permutation_permutes_logits(self):
        params = tiny_model(2)
        images, _ = random_batch(params, 5, 3)
        perm = np.array([4, 2, 0, 1, 3])
        assert np.allclose(nn.forward(params, images)[perm], nn.forward(params, images[perm]))

    def test_shape_mismatch_rejected(self):
        params = tiny_model(3)
        with pytest.raises(ValueError, match="shape"):
            nn.forward(params, np.zeros((2, 9, 8, 2)))

    def test_logits_finite(self):
        params = tiny_model(4)
        images, _ = random_batch(params, 2, 5)
        assert np.all(np.isfinite(nn.forward(params, images)))


class TestSoftCrossEntropy:
    def test_uniform_logits_one_hot_target_is_log_k(self):
        for k in (2, 5, 20):
            logits = np.zeros((1, k))
            target = np.zeros((1, k))
            target[0, 0] = 1.0
            assert nn.soft_cross_entropy(logits, target) == pytest.approx(np.log(k), abs=1e-12)

    def test_affine_in_target(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(4, 6))
        ya = rng.dirichlet(np.ones(6), size=4)
        yb = rng.dirichlet(np.ones(6), size=4)
        lam = 0.37
        mixed = lam * ya + (1 - lam) * yb
        lhs = nn.soft_cross_entropy(logits, mixed)
        rhs = lam * nn.soft_cross_entropy(logits, ya) + (1 - lam) * nn.soft_cross_entropy(logits, yb)
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_large_logits_stable(self):
        logits = np.array([[1000.0, -1000.0, 0.0]])
        target = np.array([[1.0, 0.0, 0.0]])
        assert nn.soft_cross_entropy(logits, target) == pytest.approx(0.0, abs=1e-9)

    def test_non_simplex_target_rejected(self):
        with pytest.raises(ValueError):
            nn.soft_cross_entropy(np.zeros((1, 3)), np.array([[0.5, 0.6, 0.2]]))

    def test_gradient_on_three_class_toy(self):
        # direct logit gradient vs finite differences on the loss itself
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(2, 3))
        target = rng.dirichlet(np.ones(3), size=2)
        h = 1e-5
        fd = np.zeros_like(logits)
        for i in range(2):
            for j in range(3):
                zp = logits.copy()
                zp[i, j] += h
                zm = logits.copy()
                zm[i, j] -= h
                fd[i, j] = (
                    nn.soft_cross_entropy(zp, target) - nn.soft_cross_entropy(zm, target)
                ) / (2 * h)
        shifted = logits - logits.max(axis=1, keepdims=True)
        softmax = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
        analytic = (softmax - target) / 2
        assert gradient_rel_error(analytic, fd) < 1e-6


class TestGradients:
    def test_full_network_matches_finite_differences(self):
        for seed in range(3):
            params = tiny_model(seed)
            images, labels = random_batch(params, 2, seed + 10)
            _, analytic = nn.compute_gradients(params, images, labels)
            numeric = fd_gradient(params, images, labels)
            assert gradient_rel_error(analytic, numeric) < 1e-6

    def test_linear_arch_matches_finite_differences(self):
        params = nn.init_model(
            "linear", 4, seed=3, input_size=4, in_channels=1, dtype=np.float64
        )
        images, labels = random_batch(params, 3, 7)
        _, analytic = nn.compute_gradients(params, images, labels)
        numeric = fd_gradient(params, images, labels)
        assert gradient_rel_error(analytic, numeric) < 1e-6

    def test_frozen_backbone_gradient_slices_zero(self):
        from dataclasses import replace

        params = replace(tiny_model(5), frozen=frozenset({nn.BACKBONE}))
        images, labels = random_batch(params, 2, 6)
        _, grads = nn.compute_gradients(params, images, labels)
        for name in ("conv1", "conv2", "conv3"):
            assert np.all(grads[params.slices[name + ".w"]] == 0.0)
            assert np.all(grads[params.slices[name + ".b"]] == 0.0)
        assert np.any(grads[params.slices["fc.w"]] != 0.0)

    def test_duplicated_batch_equals_single_sample(self):
        params = tiny_model(6)
        images, labels = random_batch(params, 1, 8)
        _, single = nn.compute_gradients(params, images, labels)
        dup_images = np.repeat(images, 3, axis=0)
        dup_labels = np.repeat(labels, 3, axis=0)
        _, tripled = nn.compute_gradients(params, dup_images, dup_labels)
        assert np.allclose(single, tripled, atol=1e-12)

    def test_loss_value_matches_forward_path(self):
        params = tiny_model(7)
        images, labels = random_batch(params, 4, 9)
        loss, _ = nn.compute_gradients(params, images, labels)
        assert loss == pytest.approx(
            nn.soft_cross_entropy(nn.forward(params, images), labels), abs=1e-12
        )


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = nn.init_model("smallconv", 7, seed=2)
        path = tmp_path / "model.bin"
        nn.save_checkpoint(params, path)
        loaded = nn.load_checkpoint(path)
        assert np.array_equal(loaded.theta, params.theta)
        assert loaded.descriptor == params.descriptor

    def test_corrupt_payload_byte_fails_crc(self, tmp_path):
        params = nn.init_model("smallconv", 3, seed=2)
        path = tmp_path / "model.bin"
        nn.save_checkpoint(params, path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) - 10] ^= 0x40
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="CRC"):
            nn.load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "model.bin"
        path.write_bytes(b"NOPE" + bytes(100))
        with pytest.raises(CheckpointError, match="magic"):
            nn.load_checkpoint(path)

    def test_truncation_rejected(self, tmp_path):
        params = nn.init_model("smallconv", 3, seed=2)
        path = tmp_path / "model.bin"
        nn.save_checkpoint(params, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError):
            nn.load_checkpoint(path)

    def test_descriptor_declares_class_count(self, tmp_path):
        params = nn.init_model("smallconv", 307, seed=0)
        path = tmp_path / "model.bin"
        nn.save_checkpoint(params, path)
        assert nn.load_checkpoint(path).descriptor["classes"] == 307

    def test_payload_length_mismatch_rejected(self, tmp_path):
        import json
        import struct
        import zlib

        params = nn.init_model("smallconv", 3, seed=1)
        desc = json.dumps(params.descriptor, sort_keys=True).encode()
        payload = params.theta.astype("<f4").tobytes()[:-8]  # drop two weights
        blob = (
            nn.CHECKPOINT_MAGIC
            + struct.pack("<I", nn.CHECKPOINT_VERSION)
            + struct.pack("<I", len(desc))
            + desc
            + payload
            + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
        )
        path = tmp_path / "model.bin"
        path.write_bytes(blob)
        with pytest.raises(CheckpointError, match="mismatch"):
            nn.load_checkpoint(path)
