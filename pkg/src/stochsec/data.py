"""Datasets: desk-scale synthetic generators and CIFAR-10 binary ingestion.

All inputs live in [0,1]^d so the same pixel-box semantics apply to the
2-D toys and to image data.  Labels are integers in [0, n_classes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import substream

TOY_KINDS = ("gauss-mix-2d", "rings-2d", "synthetic-digits-8x8")

CIFAR_RECORD_BYTES = 3073
CIFAR_PIXELS = 3072


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    """Train/test split of box-domain inputs with integer class labels."""

    train_inputs: np.ndarray
    train_labels: np.ndarray
    test_inputs: np.ndarray
    test_labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        for tag in ("train", "test"):
            x, y = self.inputs(tag), self.labels(tag)
            if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
                raise ValueError(f"{tag} split has inconsistent shapes "
                                 f"{x.shape} / {y.shape}")
            if x.size and (x.min() < 0.0 or x.max() > 1.0):
                raise ValueError(f"{tag} inputs fall outside [0, 1]")
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise ValueError(f"{tag} labels outside [0, {self.n_classes})")

    @property
    def dim(self) -> int:
        return self.train_inputs.shape[1]

    def inputs(self, split: str) -> np.ndarray:
        if split == "train":
            return self.train_inputs
        if split == "test":
            return self.test_inputs
        raise ValueError(f"unknown split {split!r}")

    def labels(self, split: str) -> np.ndarray:
        if split == "train":
            return self.train_labels
        if split == "test":
            return self.test_labels
        raise ValueError(f"unknown split {split!r}")


def _finish(x: np.ndarray, y: np.ndarray, rng: np.random.Generator):
    """Clip to the box and shuffle jointly."""
    x = np.clip(x, 0.0, 1.0)
    order = rng.permutation(len(y))
    return x[order], y[order]


def _gauss_mix_2d(per_class: int, rng: np.random.Generator):
    means = np.array([[0.3, 0.5], [0.8, 0.5]])
    std = 0.05
    xs, ys = [], []
    for label, mean in enumerate(means):
        xs.append(mean + std * rng.standard_normal((per_class, 2)))
        ys.append(np.full(per_class, label, dtype=np.int64))
    return _finish(np.concatenate(xs), np.concatenate(ys), rng), 2


def _rings_2d(per_class: int, rng: np.random.Generator):
    radii = (0.15, 0.35)
    xs, ys = [], []
    for label, radius in enumerate(radii):
        theta = rng.uniform(0.0, 2 * np.pi, per_class)
        r = radius + 0.02 * rng.standard_normal(per_class)
        pts = 0.5 + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        xs.append(pts)
        ys.append(np.full(per_class, label, dtype=np.int64))
    return _finish(np.concatenate(xs), np.concatenate(ys), rng), 2


# 5x7 dot-matrix digit glyphs, one string row per pixel row.
_GLYPHS = [
    ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
]

DIGIT_SIDE = 8
# Foreground intensity range and pixel noise scale.  Deliberately faint:
# small-margin classes keep tiny-budget attacks meaningful at desk scale.
DIGIT_INTENSITY = (0.30, 0.55)
DIGIT_NOISE = 0.06


def _glyph_bitmaps() -> np.ndarray:
    out = np.zeros((10, 7, 5))
    for digit, rows in enumerate(_GLYPHS):
        for i, row in enumerate(rows):
            out[digit, i] = [float(c) for c in row]
    return out


def _synthetic_digits(per_class: int, rng: np.random.Generator):
    glyphs = _glyph_bitmaps()
    xs, ys = [], []
    for digit in range(10):
        images = np.zeros((per_class, DIGIT_SIDE, DIGIT_SIDE))
        dx = rng.integers(0, DIGIT_SIDE - 5 + 1, per_class)
        dy = rng.integers(0, DIGIT_SIDE - 7 + 1, per_class)
        gain = rng.uniform(*DIGIT_INTENSITY, per_class)
        for i in range(per_class):
            images[i, dy[i]:dy[i] + 7, dx[i]:dx[i] + 5] = gain[i] * glyphs[digit]
        images += DIGIT_NOISE * rng.standard_normal(images.shape)
        xs.append(images.reshape(per_class, -1))
        ys.append(np.full(per_class, digit, dtype=np.int64))
    return _finish(np.concatenate(xs), np.concatenate(ys), rng), 10


_GENERATORS = {
    "gauss-mix-2d": _gauss_mix_2d,
    "rings-2d": _rings_2d,
    "synthetic-digits-8x8": _synthetic_digits,
}


def generate_toy_dataset(kind: str, train_per_class: int, test_per_class: int,
                         seed: int) -> LabeledDataset:
    """Deterministic synthetic dataset with a train/test split.

    Sizes are per class; at least 10 samples per class in each split.
    """
    if kind not in _GENERATORS:
        raise ValueError(f"unknown dataset kind {kind!r}; choose from {TOY_KINDS}")
    if min(train_per_class, test_per_class) < 10:
        raise ValueError("need at least 10 samples per class in each split")
    make = _GENERATORS[kind]
    (xtr, ytr), n_classes = make(train_per_class, substream(seed, "data", kind, 0))
    (xte, yte), _ = make(test_per_class, substream(seed, "data", kind, 1))
    return LabeledDataset(xtr, ytr, xte, yte, n_classes)


def ingest_cifar10(path) -> LabeledDataset:
    """Parse a CIFAR-10 binary batch file (label byte + 3072 pixel bytes).

    Pixels map to [0,1] by /255 in record order: channel plane (R, G, B),
    then row-major within each 32x32 plane.  All records land in the
    train split; the test split is empty.
    """
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD_BYTES != 0:
        raise DatasetFormatError(
            f"{path}: {raw.size} bytes is not a multiple of {CIFAR_RECORD_BYTES}")
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise DatasetFormatError(f"{path}: record {bad[0]} has label {labels[bad[0]]}")
    inputs = records[:, 1:].astype(np.float64) / 255.0
    empty_x = np.zeros((0, CIFAR_PIXELS))
    empty_y = np.zeros(0, dtype=np.int64)
    return LabeledDataset(inputs, labels, empty_x, empty_y, n_classes=10)


def serialize_cifar10(inputs: np.ndarray, labels: np.ndarray) -> bytes:
    """Inverse of ingest_cifar10 for round-trip checks."""
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if inputs.ndim != 2 or inputs.shape[1] != CIFAR_PIXELS:
        raise ValueError(f"expected (N, {CIFAR_PIXELS}) inputs")
    pixels = np.rint(inputs * 255.0).astype(np.uint8)
    records = np.concatenate(
        [labels.astype(np.uint8)[:, None], pixels], axis=1)
    return records.tobytes()
