"""Verification testbeds and data ingestion.

The quadratic problem family provides a loss with known minimizer, strong
convexity mu and gradient Lipschitz constant L (the spectrum extremes), and a
synthetic gradient-noise channel whose variance is sigma^2 exactly — the
controlled environment for the convergence checks.  MNIST arrives in IDX files
(big-endian header words, u8 payload), optionally gzip-compressed.
"""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .nn import Batch


@dataclass(frozen=True)
class ConvexProblem:
    """loss(theta) = 0.5 (theta - theta*)^T A (theta - theta*), A symmetric PD."""

    A: np.ndarray
    theta_star: np.ndarray
    mu: float
    lip: float

    def loss(self, theta):
        diff = theta - self.theta_star
        return 0.5 * np.sum((diff @ self.A) * diff, axis=-1)

    def grad(self, theta):
        return (theta - self.theta_star) @ self.A

    @property
    def dim(self):
        return len(self.theta_star)


def make_quadratic(d, condition_number, sparsity_of_minimizer=0.25, seed=0):
    """Random quadratic with eigenvalues log-spaced in [1, condition_number].

    theta* gets round(sparsity * d) nonzero standard-normal entries at random
    positions (at least one if sparsity > 0), so the regularized distance to the
    minimizer is finite and its decay observable.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if condition_number < 1:
        raise ValueError("condition number must be >= 1")
    rng = np.random.default_rng(seed)
    eigs = np.logspace(0.0, np.log10(condition_number), d)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    a = (q * eigs) @ q.T
    a = 0.5 * (a + a.T)
    theta_star = np.zeros(d)
    n_nonzero = int(round(sparsity_of_minimizer * d))
    if sparsity_of_minimizer > 0:
        n_nonzero = max(1, n_nonzero)
    if n_nonzero > 0:
        idx = rng.choice(d, size=n_nonzero, replace=False)
        theta_star[idx] = rng.standard_normal(n_nonzero)
    return ConvexProblem(A=a, theta_star=theta_star, mu=float(eigs[0]), lip=float(eigs[-1]))


@dataclass(frozen=True)
class NoiseChannel:
    """Additive Gaussian gradient noise with E||xi||^2 = sigma^2 exactly.

    The covariance is (sigma^2 / d) * I, so the bound on the noise second moment
    holds with equality and check tolerances can be tight.
    """

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


def noisy_grad(problem, channel, theta, rng):
    """Unbiased stochastic gradient: exact gradient plus the channel's noise."""
    g = problem.grad(theta)
    if channel.sigma == 0.0:
        return g
    scale = channel.sigma / np.sqrt(problem.dim)
    return g + scale * rng.standard_normal(theta.shape)


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, pixels) float64 in [0, 1]
    labels: np.ndarray  # (N,) integers
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels disagree on N")

    def __len__(self):
        return len(self.images)


class IdxFormatError(ValueError):
    """IDX parse failure; offset and expectation are part of the message."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _open_maybe_gz(path, mode):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def _read_words(data, offset, count, path):
    end = offset + 4 * count
    if len(data) < end:
        raise IdxFormatError(
            f"{path}: header truncated, needed {end} bytes, file has {len(data)}", len(data)
        )
    return struct.unpack(f">{count}I", data[offset:end])


def load_mnist_idx(images_path, labels_path):
    """Parse an IDX image/label file pair into a Dataset with pixels in [0, 1]."""
    with _open_maybe_gz(images_path, "rb") as f:
        img_data = f.read()
    with _open_maybe_gz(labels_path, "rb") as f:
        lab_data = f.read()

    (magic,) = _read_words(img_data, 0, 1, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(
            f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}", 0
        )
    n, rows, cols = _read_words(img_data, 4, 3, images_path)
    expected = 16 + n * rows * cols
    if len(img_data) != expected:
        raise IdxFormatError(
            f"{images_path}: payload has {len(img_data) - 16} bytes, expected {n * rows * cols}",
            min(len(img_data), expected),
        )

    (magic,) = _read_words(lab_data, 0, 1, labels_path)
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(
            f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}", 0
        )
    (n_lab,) = _read_words(lab_data, 4, 1, labels_path)
    expected = 8 + n_lab
    if len(lab_data) != expected:
        raise IdxFormatError(
            f"{labels_path}: payload has {len(lab_data) - 8} bytes, expected {n_lab}",
            min(len(lab_data), expected),
        )
    if n != n_lab:
        raise IdxFormatError(
            f"image count {n} does not match label count {n_lab}", 4
        )

    pixels = np.frombuffer(img_data, dtype=np.uint8, offset=16).astype(np.float64) / 255.0
    images = pixels.reshape(n, rows * cols)
    labels = np.frombuffer(lab_data, dtype=np.uint8, offset=8).astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() > 9):
        raise IdxFormatError(f"{labels_path}: labels outside 0..9", 8)
    return Dataset(images=images, labels=labels)


def write_mnist_idx(images_u8, labels_u8, images_path, labels_path):
    """Write u8 images (N, rows, cols) and labels (N,) as an IDX file pair."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels_u8 = np.asarray(labels_u8, dtype=np.uint8)
    n, rows, cols = images_u8.shape
    with _open_maybe_gz(images_path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images_u8.tobytes())
    with _open_maybe_gz(labels_path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, n))
        f.write(labels_u8.tobytes())


def batches(dataset, batch_size, seed, epoch=0):
    """Deterministic minibatch sequence for one epoch.

    The permutation depends only on (seed, epoch); the last short batch is kept,
    so every sample is visited exactly once per epoch.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    order = np.random.default_rng([seed, epoch]).permutation(n)
    out = []
    for lo in range(0, n, batch_size):
        idx = order[lo : lo + batch_size]
        out.append(Batch(inputs=dataset.images[idx], targets=dataset.labels[idx]))
    return out
