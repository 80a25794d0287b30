"""Shared synthetic fixtures: corpus files and textured test images."""

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from ensvis.dataset import IMAGE_SIDE, RECORD_BYTES


def noise_texture(rng, size=64, smooth=2.0):
    """Band-limited random field in [0, 1]; dense in scale-space extrema."""
    img = gaussian_filter(rng.standard_normal((size, size)), smooth, mode="nearest")
    img -= img.min()
    peak = img.max()
    return img / peak if peak > 0 else img


def blob_image(rng, size=64, n_blobs=6, amplitude=1.0):
    """Smooth random blob field in [0, 1]; rich in isotropic keypoints."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size))
    for _ in range(n_blobs):
        cy, cx = rng.uniform(8, size - 8, size=2)
        s = rng.uniform(2.0, 5.0)
        a = rng.uniform(0.4, 1.0) * rng.choice([-1.0, 1.0]) * amplitude
        img += a * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    img -= img.min()
    peak = img.max()
    return img / peak if peak > 0 else img


def checker_image(rng, size=32, period=None):
    """Axis-aligned checkerboard with random phase and period."""
    period = period or int(rng.choice([4, 8]))
    py, px = rng.integers(0, period, size=2)
    yy, xx = np.mgrid[0:size, 0:size]
    board = (((yy + py) // period + (xx + px) // period) % 2).astype(np.float64)
    return 0.15 + 0.7 * board


def class_image_rgb(rng, label):
    """Synthetic 32x32 RGB image for a 2-class corpus: blobs vs checkers."""
    if label == 0:
        gray = blob_image(rng, size=IMAGE_SIDE, n_blobs=4)
    else:
        gray = checker_image(rng, size=IMAGE_SIDE)
    gray = np.clip(gray + rng.normal(0, 0.02, gray.shape), 0, 1)
    return np.repeat((gray * 255).astype(np.uint8)[:, :, None], 3, axis=2)


def write_batch(path, pixels, labels):
    """Write images (N, 32, 32, 3) uint8 + labels as one binary batch file."""
    n = len(labels)
    records = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels
    planar = np.transpose(pixels, (0, 3, 1, 2))  # channel-planar
    records[:, 1:] = planar.reshape(n, -1)
    records.tofile(path)


def make_two_class_corpus(root, n_train=160, n_test=40, seed=7):
    """Blobs-vs-checkers corpus in the standard binary batch layout."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    for fname, n in (("data_batch_1.bin", n_train), ("test_batch.bin", n_test)):
        labels = np.arange(n) % 2
        pixels = np.stack([class_image_rgb(rng, int(l)) for l in labels])
        write_batch(root / fname, pixels, labels)
    return root


def oriented_field(rng, theta_deg, size=IMAGE_SIDE):
    """Blob anchors plus a sinusoidal grating at a class-specific angle.

    The blobs guarantee scale-space keypoints; the grating's orientation is
    the class signal. Rotation-normalized local descriptors are nearly
    blind to it while convolutional features see it directly, which keeps
    the two feature families comparable in strength on the whole corpus.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size))
    for _ in range(7):
        cy, cx = rng.uniform(4, size - 4, 2)
        s = rng.uniform(1.5, 3.5)
        img += rng.uniform(0.3, 0.8) * rng.choice([-1.0, 1.0]) * np.exp(
            -((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s)
        )
    th = np.deg2rad(theta_deg + rng.uniform(-12, 12))
    img += 0.35 * np.sin(
        2 * np.pi * (np.cos(th) * xx + np.sin(th) * yy) / 5 + rng.uniform(0, 6)
    )
    img -= img.min()
    return img / max(img.max(), 1e-9)


def ten_class_image(rng, label):
    """Texture recipes, one per class: four grating orientations plus six
    distinct texture families."""
    size = IMAGE_SIDE
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    phase = rng.uniform(0, 2 * np.pi)
    if label < 4:
        img = oriented_field(rng, 45.0 * label, size)
    elif label == 4:
        img = checker_image(rng, size, period=4)
    elif label == 5:
        img = checker_image(rng, size, period=8)
    elif label == 6:
        img = blob_image(rng, size, n_blobs=4)
    elif label == 7:
        cy, cx = rng.uniform(12, 20, size=2)
        img = 0.5 + 0.4 * np.cos(np.hypot(yy - cy, xx - cx) * 1.8 + phase)
    elif label == 8:
        img = np.zeros((size, size))
        img[(yy % 6 < 2) & (xx % 6 < 2)] = 1.0
        img = np.roll(img, rng.integers(0, 6, 2), axis=(0, 1))
    else:
        img = noise_texture(rng, size=size, smooth=1.0)
    img = np.clip(img + rng.normal(0, 0.06, img.shape), 0, 1)
    rgb = np.stack([img, img, img], axis=2)
    return (rgb * 255).astype(np.uint8)


def make_ten_class_corpus(root, per_class_train=100, per_class_test=100, seed=11):
    """10 texture classes in the standard binary batch layout."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    for fname, per_class in (
        ("data_batch_1.bin", per_class_train),
        ("test_batch.bin", per_class_test),
    ):
        labels = np.arange(per_class * 10) % 10
        pixels = np.stack([ten_class_image(rng, int(l)) for l in labels])
        write_batch(root / fname, pixels, labels)
    return root


@pytest.fixture
def two_class_corpus(tmp_path):
    return make_two_class_corpus(tmp_path / "corpus")


@pytest.fixture
def rng():
    return np.random.default_rng(42)
