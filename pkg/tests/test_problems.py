import gzip

import numpy as np
import pytest

from bregopt.nn import Batch
from bregopt.problems import (
    ConvexProblem,
    Dataset,
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    IdxFormatError,
    batches,
    load_mnist_idx,
    make_quadratic,
    noisy_grad,
    NoiseChannel,
    write_mnist_idx,
)
from conftest import VAL_IMAGES, VAL_LABELS


# --- quadratic testbed -------------------------------------------------------


def test_quadratic_d1_identity():
    p = make_quadratic(1, 1.0, sparsity_of_minimizer=0.0)
    np.testing.assert_allclose(p.A, [[1.0]])
    assert p.mu == p.lip == 1.0
    assert p.loss(p.theta_star + 2.0) == pytest.approx(2.0)
    assert p.grad(p.theta_star + 2.0)[0] == pytest.approx(2.0)


def test_quadratic_spectrum():
    p = make_quadratic(20, 10.0, seed=3)
    eigs = np.linalg.eigvalsh(p.A)
    np.testing.assert_allclose(eigs, np.logspace(0, 1, 20), rtol=1e-10)
    assert p.mu == pytest.approx(1.0)
    assert p.lip == pytest.approx(10.0)


def test_quadratic_gradient_zero_at_minimizer():
    p = make_quadratic(15, 5.0, seed=1)
    np.testing.assert_array_equal(p.grad(p.theta_star), np.zeros(15))
    assert p.loss(p.theta_star) == 0.0


def test_quadratic_gradient_matches_finite_differences():
    p = make_quadratic(6, 4.0, seed=2)
    rng = np.random.default_rng(0)
    theta = rng.normal(size=6)
    g = p.grad(theta)
    h = 1e-6
    for i in range(6):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fd = (p.loss(tp) - p.loss(tm)) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_quadratic_convexity_and_smoothness():
    p = make_quadratic(10, 8.0, seed=4)
    rng = np.random.default_rng(5)
    for _ in range(1000):
        x, y = rng.normal(size=(2, 10)) * 3
        lower = p.loss(x) + p.grad(x) @ (y - x) + 0.5 * p.mu * np.sum((y - x) ** 2)
        assert p.loss(y) >= lower - 1e-9
        gdiff = np.linalg.norm(p.grad(x) - p.grad(y))
        assert gdiff <= p.lip * np.linalg.norm(x - y) * (1 + 1e-12) + 1e-12


def test_quadratic_minimizer_sparsity():
    p = make_quadratic(20, 10.0, sparsity_of_minimizer=0.25, seed=6)
    assert np.count_nonzero(p.theta_star) == 5
    p0 = make_quadratic(20, 10.0, sparsity_of_minimizer=0.0, seed=6)
    assert np.count_nonzero(p0.theta_star) == 0
    p_small = make_quadratic(20, 10.0, sparsity_of_minimizer=0.01, seed=6)
    assert np.count_nonzero(p_small.theta_star) == 1  # at least one when requested > 0


def test_quadratic_batched_loss_grad():
    p = make_quadratic(7, 3.0, seed=7)
    thetas = np.random.default_rng(8).normal(size=(4, 7))
    losses = p.loss(thetas)
    grads = p.grad(thetas)
    assert losses.shape == (4,) and grads.shape == (4, 7)
    for i in range(4):
        assert losses[i] == pytest.approx(float(p.loss(thetas[i])), rel=1e-14)
        np.testing.assert_allclose(grads[i], p.grad(thetas[i]), atol=1e-14)


def test_quadratic_validation():
    with pytest.raises(ValueError):
        make_quadratic(0, 5.0)
    with pytest.raises(ValueError):
        make_quadratic(5, 0.5)


def test_noise_channel():
    p = make_quadratic(20, 4.0, seed=9)
    theta = np.ones(20)
    quiet = NoiseChannel(sigma=0.0)
    np.testing.assert_array_equal(
        noisy_grad(p, quiet, theta, np.random.default_rng(0)), p.grad(theta)
    )
    with pytest.raises(ValueError):
        NoiseChannel(sigma=-1.0)

    channel = NoiseChannel(sigma=0.5)
    rng = np.random.default_rng(1)
    draws = 20_000
    thetas = np.broadcast_to(theta, (draws, 20))
    xi = noisy_grad(p, channel, thetas, rng) - p.grad(theta)
    # unbiased: each coordinate mean within 4 SE of zero
    se = 0.5 / np.sqrt(20 * draws)
    assert np.max(np.abs(xi.mean(axis=0))) <= 4 * se
    # second moment E||xi||^2 = sigma^2 within 5%
    second = float(np.mean(np.sum(xi * xi, axis=1)))
    assert abs(second - 0.25) <= 0.05 * 0.25


# --- IDX parsing -------------------------------------------------------------


IMG_BYTES = bytes(
    [0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3,
     0, 255, 128, 1, 2, 3, 10, 20, 30, 40, 50, 60]
)
LAB_BYTES = bytes([0, 0, 8, 1, 0, 0, 0, 2, 7, 2])


def write_fixture(tmp_path, img=IMG_BYTES, lab=LAB_BYTES):
    ip = tmp_path / "img.idx"
    lp = tmp_path / "lab.idx"
    ip.write_bytes(img)
    lp.write_bytes(lab)
    return ip, lp


def test_idx_writer_produces_enumerated_bytes(tmp_path):
    images = np.array(
        [[[0, 255, 128], [1, 2, 3]], [[10, 20, 30], [40, 50, 60]]], dtype=np.uint8
    )
    labels = np.array([7, 2], dtype=np.uint8)
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_mnist_idx(images, labels, ip, lp)
    assert ip.read_bytes() == IMG_BYTES
    assert lp.read_bytes() == LAB_BYTES


def test_idx_load_hand_fixture(tmp_path):
    ip, lp = write_fixture(tmp_path)
    ds = load_mnist_idx(ip, lp)
    assert ds.images.shape == (2, 6)
    np.testing.assert_allclose(
        ds.images[0], np.array([0, 255, 128, 1, 2, 3]) / 255.0, atol=0
    )
    np.testing.assert_array_equal(ds.labels, [7, 2])
    assert ds.images.dtype == np.float64


def test_idx_gzip_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    images = rng.integers(0, 256, size=(5, 4, 4), dtype=np.uint8)
    labels = rng.integers(0, 10, size=5).astype(np.uint8)
    ip, lp = tmp_path / "img.idx.gz", tmp_path / "lab.idx.gz"
    write_mnist_idx(images, labels, ip, lp)
    with gzip.open(ip) as f:
        assert f.read(4) == bytes([0, 0, 8, 3])  # really gzip-compressed IDX
    ds = load_mnist_idx(ip, lp)
    np.testing.assert_array_equal(ds.images, images.reshape(5, 16) / 255.0)
    np.testing.assert_array_equal(ds.labels, labels)


def test_idx_bad_magic(tmp_path):
    ip, lp = write_fixture(tmp_path, img=LAB_BYTES[:4] + IMG_BYTES[4:])
    with pytest.raises(IdxFormatError) as e:
        load_mnist_idx(ip, lp)
    assert e.value.offset == 0
    assert f"0x{IDX_IMAGES_MAGIC:08x}" in str(e.value)
    assert f"0x{IDX_LABELS_MAGIC:08x}" in str(e.value)  # found magic named too


def test_idx_truncated_payload(tmp_path):
    ip, lp = write_fixture(tmp_path, img=IMG_BYTES[:25])
    with pytest.raises(IdxFormatError) as e:
        load_mnist_idx(ip, lp)
    assert e.value.offset == 25
    assert "payload has 9 bytes, expected 12" in str(e.value)


def test_idx_truncated_header(tmp_path):
    ip, lp = write_fixture(tmp_path, img=IMG_BYTES[:10])
    with pytest.raises(IdxFormatError) as e:
        load_mnist_idx(ip, lp)
    assert e.value.offset == 10
    assert "header truncated" in str(e.value)


def test_idx_count_mismatch(tmp_path):
    lab3 = bytes([0, 0, 8, 1, 0, 0, 0, 3, 7, 2, 1])
    ip, lp = write_fixture(tmp_path, lab=lab3)
    with pytest.raises(IdxFormatError) as e:
        load_mnist_idx(ip, lp)
    assert e.value.offset == 4
    assert "does not match" in str(e.value)


def test_idx_label_out_of_range(tmp_path):
    lab_bad = bytes([0, 0, 8, 1, 0, 0, 0, 2, 7, 12])
    ip, lp = write_fixture(tmp_path, lab=lab_bad)
    with pytest.raises(IdxFormatError) as e:
        load_mnist_idx(ip, lp)
    assert e.value.offset == 8


def test_bundled_validation_split_loads():
    ds = load_mnist_idx(VAL_IMAGES, VAL_LABELS)
    assert len(ds) == 5000
    assert ds.images.shape == (5000, 784)
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
    assert set(np.unique(ds.labels)) == set(range(10))


# --- batching ----------------------------------------------------------------


def small_dataset(n=10):
    images = np.arange(n, dtype=float).reshape(n, 1)
    labels = np.arange(n) % 10
    return Dataset(images=images, labels=labels)


def test_batches_partition_and_short_tail():
    ds = small_dataset(10)
    bs = batches(ds, 4, seed=0, epoch=0)
    assert [len(b) for b in bs] == [4, 4, 2]
    seen = np.sort(np.concatenate([b.inputs.ravel() for b in bs]))
    np.testing.assert_array_equal(seen, np.arange(10.0))
    for b in bs:
        assert isinstance(b, Batch)


def test_batches_deterministic_per_seed_and_epoch():
    ds = small_dataset(32)
    a = batches(ds, 8, seed=5, epoch=2)
    b = batches(ds, 8, seed=5, epoch=2)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.inputs, y.inputs)
        np.testing.assert_array_equal(x.targets, y.targets)
    c = batches(ds, 8, seed=5, epoch=3)
    assert any(
        not np.array_equal(x.inputs, y.inputs) for x, y in zip(a, c)
    )  # new epoch reshuffles


def test_batches_single_batch_when_size_covers_all():
    ds = small_dataset(6)
    bs = batches(ds, 6, seed=1)
    assert len(bs) == 1 and len(bs[0]) == 6


def test_batches_validation():
    ds = small_dataset(4)
    with pytest.raises(ValueError):
        batches(ds, 0, seed=0)
    empty = Dataset(images=np.zeros((0, 1)), labels=np.zeros(0, dtype=int))
    with pytest.raises(ValueError):
        batches(empty, 2, seed=0)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(images=np.zeros((3, 2)), labels=np.zeros(2, dtype=int))
