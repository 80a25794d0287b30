"""CIFAR-10 binary corpus loading and image preprocessing.

Batch files are sequences of 3073-byte records: one label byte followed by
3072 pixel bytes stored channel-planar (all R, all G, all B), row-major
within each 32x32 plane. The standard corpus ships five train batches
(``data_batch_1.bin`` .. ``data_batch_5.bin``) and one ``test_batch.bin``.
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import CorruptRecordError, MalformedCorpusError

IMAGE_SIDE = 32
CHANNELS = 3
PIXEL_BYTES = IMAGE_SIDE * IMAGE_SIDE * CHANNELS  # 3072
RECORD_BYTES = 1 + PIXEL_BYTES  # 3073
NUM_CLASSES = 10
TRAIN_BATCHES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_BATCHES = ("test_batch.bin",)

# ITU-R BT.601 luminance weights.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Image:
    """One raw 8-bit RGB image with its class label and split-local id."""

    pixels: np.ndarray  # (32, 32, 3) uint8
    label: int
    id: int

    def __post_init__(self):
        if self.pixels.shape != (IMAGE_SIDE, IMAGE_SIDE, CHANNELS):
            raise MalformedCorpusError(f"bad pixel grid shape {self.pixels.shape}")
        if not 0 <= self.label < NUM_CLASSES:
            raise CorruptRecordError(f"label {self.label} out of range")


@dataclass(frozen=True)
class GrayImage:
    """Real-valued luminance grid in [0, 1], possibly upsampled."""

    pixels: np.ndarray  # (H, W) float64 in [0, 1]
    scale_factor: int = 1


def _split_files(path, split):
    path = os.fspath(path)
    nested = os.path.join(path, "cifar-10-batches-bin")
    if os.path.isdir(nested):
        path = nested
    names = TRAIN_BATCHES if split == "train" else TEST_BATCHES
    files = [os.path.join(path, n) for n in names if os.path.exists(os.path.join(path, n))]
    if not files:
        raise MalformedCorpusError(f"no {split} batch files under {path}")
    return files


def load_batch_file(path, first_id=0):
    """Decode one binary batch file into a list of Image records."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) == 0 or len(blob) % RECORD_BYTES != 0:
        raise MalformedCorpusError(
            f"{path}: {len(blob)} bytes is not a positive multiple of {RECORD_BYTES}"
        )
    records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = records[:, 0]
    bad = np.nonzero(labels >= NUM_CLASSES)[0]
    if bad.size:
        raise CorruptRecordError(
            f"{path}: record {bad[0]} has label byte {labels[bad[0]]}"
        )
    planes = records[:, 1:].reshape(-1, CHANNELS, IMAGE_SIDE, IMAGE_SIDE)
    pixels = np.transpose(planes, (0, 2, 3, 1))  # (N, 32, 32, 3), views
    labels = labels.tolist()
    return [
        Image(pixels=pixels[i], label=labels[i], id=first_id + i)
        for i in range(records.shape[0])
    ]


def load_cifar10(path, split):
    """Load one split in deterministic file order with split-local ids."""
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    images = []
    for fname in _split_files(path, split):
        images.extend(load_batch_file(fname, first_id=len(images)))
    return images


def _catmull_rom_weights(t):
    """Cubic interpolation weights for the 4 taps around fraction t."""
    # Catmull-Rom kernel (a = -1/2) evaluated at offsets 1+t, t, 1-t, 2-t.
    t2, t3 = t * t, t * t * t
    return np.stack(
        [
            -0.5 * t3 + t2 - 0.5 * t,
            1.5 * t3 - 2.5 * t2 + 1.0,
            -1.5 * t3 + 2.0 * t2 + 0.5 * t,
            0.5 * t3 - 0.5 * t2,
        ],
        axis=-1,
    )


def _upsample_axis(img, factor):
    """Upsample axis 0 by an integer factor with clamped borders."""
    n = img.shape[0]
    out_n = n * factor
    # Source coordinate of each output sample, center-aligned.
    src = (np.arange(out_n) + 0.5) / factor - 0.5
    base = np.floor(src).astype(int)
    frac = src - base
    weights = _catmull_rom_weights(frac)  # (out_n, 4)
    taps = np.clip(base[:, None] + np.arange(-1, 3)[None, :], 0, n - 1)
    return np.einsum("ot,ot...->o...", weights, img[taps])


def preprocess(img: Image, upscale: int = 2) -> GrayImage:
    """Convert to [0, 1] luminance and bicubically upsample by ``upscale``."""
    if upscale not in (1, 2, 4):
        raise ValueError(f"upscale must be 1, 2, or 4, got {upscale}")
    gray = img.pixels.astype(np.float64) @ LUMA_WEIGHTS / 255.0
    if upscale > 1:
        gray = _upsample_axis(gray, upscale)
        gray = _upsample_axis(gray.T, upscale).T
    return GrayImage(pixels=np.clip(gray, 0.0, 1.0), scale_factor=upscale)
