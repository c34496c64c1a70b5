"""Dataset ingestion: CIFAR-10 binary batches, seeded synthetic generators,
and the 50/50 search split."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

RECORD_BYTES = 3073  # 1 label byte + 3 x 1024 channel-planar pixel bytes
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)
SYNTH_MEAN = (0.5, 0.5, 0.5)
SYNTH_STD = (0.25, 0.25, 0.25)

_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
_TEST_FILES = ["test_batch.bin"]


@dataclass
class Dataset:
    """Channel-standardized images plus labels and provenance metadata."""

    images: np.ndarray   # [N, C, H, W] float32
    labels: np.ndarray   # [N] int64 in [0, num_classes)
    name: str
    num_classes: int
    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise ValueError(
                f"labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx: np.ndarray, name: str | None = None) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx],
                       name or self.name, self.num_classes, self.mean, self.std)


def _standardize(raw: np.ndarray, mean, std) -> np.ndarray:
    m = np.asarray(mean, dtype=np.float32).reshape(1, -1, 1, 1)
    s = np.asarray(std, dtype=np.float32).reshape(1, -1, 1, 1)
    return ((raw - m) / s).astype(np.float32)


def _parse_cifar_file(path: Path):
    raw = path.read_bytes()
    if len(raw) == 0 or len(raw) % RECORD_BYTES:
        raise ValueError(
            f"{path}: size {len(raw)} is not a positive multiple of {RECORD_BYTES}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = arr[:, 0]
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        offset = int(bad[0]) * RECORD_BYTES
        raise ValueError(
            f"{path}: label byte {labels[bad[0]]} > 9 at byte offset {offset}")
    images = arr[:, 1:].reshape(-1, 3, 32, 32)
    return images, labels


def load_cifar10(directory, split: str = "train", subset: int | None = None,
                 seed: int = 0) -> Dataset:
    """Parse the published binary batches (3073-byte records: label byte then
    channel-planar R,G,B row-major 32x32 pixels)."""
    d = Path(directory)
    files = _TRAIN_FILES if split == "train" else _TEST_FILES
    if split not in ("train", "test"):
        raise ValueError(f"split must be train or test, got {split!r}")
    missing = [f for f in files if not (d / f).exists()]
    if missing:
        raise FileNotFoundError(f"{d}: missing CIFAR-10 batch files {missing}")
    images, labels = [], []
    for f in files:
        im, lb = _parse_cifar_file(d / f)
        images.append(im)
        labels.append(lb)
    raw = np.concatenate(images).astype(np.float32) / 255.0
    labels = np.concatenate(labels).astype(np.int64)
    if subset is not None:
        if not 0 < subset <= len(labels):
            raise ValueError(f"subset {subset} outside (0, {len(labels)}]")
        idx = np.random.default_rng([seed, 10]).permutation(len(labels))[:subset]
        raw, labels = raw[idx], labels[idx]
    return Dataset(_standardize(raw, CIFAR10_MEAN, CIFAR10_STD), labels,
                   f"cifar10-{split}", 10, CIFAR10_MEAN, CIFAR10_STD)


def synth_dataset(seed: int, n: int, classes: int = 2, size: int = 8,
                  preset: str = "easy", channels: int = 3,
                  noise: float | None = None) -> Dataset:
    """Seeded synthetic image sets.

    "easy": class-specific gaussian blobs, linearly separable from raw pixels.
    "texture": oriented period-2 stripes with random sign and phase, so class
    means vanish and only local structure carries the label.
    """
    if preset not in ("easy", "texture"):
        raise ValueError(f"preset must be easy or texture, got {preset!r}")
    if n < classes:
        raise ValueError(f"need at least one sample per class ({classes}), got {n}")
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    rng = np.random.default_rng([seed, 20 if preset == "easy" else 21])
    labels = (np.arange(n) % classes).astype(np.int64)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)

    if preset == "easy":
        sigma = 0.2 if noise is None else noise
        centers = [(size * (0.25 + 0.5 * (c % 2)), size * (0.25 + 0.5 * ((c // 2) % 2)))
                   for c in range(classes)]
        raw = np.empty((n, channels, size, size), dtype=np.float32)
        for i in range(n):
            cy, cx = centers[labels[i]]
            blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * (size / 4) ** 2)))
            tint = 0.2 + 0.6 * ((labels[i] + np.arange(channels)) % classes) / max(classes - 1, 1)
            raw[i] = 0.15 + 0.7 * blob[None] * tint[:, None, None].astype(np.float32)
        raw += rng.standard_normal(raw.shape).astype(np.float32) * sigma
    else:
        sigma = 0.6 if noise is None else noise
        raw = np.empty((n, channels, size, size), dtype=np.float32)
        for i in range(n):
            orient = labels[i] % 2
            phase = int(rng.integers(2))
            sign = 1.0 if rng.random() < 0.5 else -1.0
            coord = xx if orient == 0 else yy
            stripes = np.where(((coord.astype(int) + phase) % 2) == 0, 1.0, -1.0)
            raw[i] = 0.5 + 0.25 * sign * stripes[None].astype(np.float32)
        raw += rng.standard_normal(raw.shape).astype(np.float32) * sigma

    raw = np.clip(raw, 0.0, 1.0)
    return Dataset(_standardize(raw, SYNTH_MEAN, SYNTH_STD), labels,
                   f"synth-{preset}", classes, SYNTH_MEAN, SYNTH_STD)


def split_half(ds: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint equal halves (weight half, architecture half); the permutation
    is a pure function of the seed. Odd sets drop their last permuted sample."""
    n = len(ds)
    perm = np.random.default_rng([seed, 30]).permutation(n)
    if n % 2:
        log.info("split_half: dropping one sample to make %d even", n)
        perm = perm[:-1]
    half = len(perm) // 2
    return (ds.take(np.sort(perm[:half]), f"{ds.name}/weight"),
            ds.take(np.sort(perm[half:]), f"{ds.name}/alpha"))
