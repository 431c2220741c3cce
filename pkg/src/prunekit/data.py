"""Deterministic dataset loading: CIFAR-10 binary files and a seeded
synthetic set used by fast tests and demos.

CIFAR-10 binary records are 3073 bytes: one label byte followed by 3072
pixel bytes (R, G, B planes, row-major 32x32). Pixels are scaled to
[0, 1] and normalized with fixed per-channel constants so output depends
only on the file bytes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)
_RECORD = 3073
_PER_FILE = 10000


@dataclass
class DataSlice:
    images: np.ndarray          # (N, C, H, W) float32
    labels: np.ndarray          # (N,) int64
    name: str = ""
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    def take(self, n):
        """First n samples, as a new slice."""
        return DataSlice(self.images[:n], self.labels[:n], self.name, dict(self.metadata))


def _read_cifar_file(path, expected_records=None, num_classes=10):
    try:
        raw = np.fromfile(path, dtype=np.uint8)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None
    if raw.size == 0 or raw.size % _RECORD != 0:
        raise DataError(f"{path}: truncated record ({raw.size} bytes is not a multiple of {_RECORD})")
    if expected_records is not None and raw.size != _RECORD * expected_records:
        raise DataError(f"{path}: expected {expected_records} records, found {raw.size // _RECORD}")
    recs = raw.reshape(-1, _RECORD)
    labels = recs[:, 0].astype(np.int64)
    if labels.max() >= num_classes:
        raise DataError(f"{path}: label byte {labels.max()} out of range")
    images = recs[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels


def load_cifar10(data_dir, split) -> DataSlice:
    """Load the train (5 files) or test (1 file) split of CIFAR-10 binary."""
    if split not in ("train", "test"):
        raise DataError(f"unknown split {split!r}")
    # tolerate pointing at the parent of the canonical extracted directory
    nested = os.path.join(data_dir, "cifar-10-batches-bin")
    if os.path.isdir(nested):
        data_dir = nested
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    images, labels = [], []
    for name in names:
        path = os.path.join(data_dir, name)
        if not os.path.exists(path):
            raise DataError(f"missing CIFAR-10 file {path}")
        imgs, labs = _read_cifar_file(path, expected_records=_PER_FILE)
        images.append(imgs)
        labels.append(labs)
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    mean = np.asarray(CIFAR_MEAN, dtype=np.float32)[None, :, None, None]
    std = np.asarray(CIFAR_STD, dtype=np.float32)[None, :, None, None]
    images = (images - mean) / std
    return DataSlice(images, labels, name=f"cifar10-{split}",
                     metadata={"mean": list(CIFAR_MEAN), "std": list(CIFAR_STD)})


def synthetic_dataset(num_classes, n_per_class, shape, noise, seed):
    """Per-class template images plus bounded uniform noise, 80/20 split.

    With noise=0 every sample equals its class template, so any sane
    classifier separates the classes perfectly. Fully deterministic in
    the seed.
    """
    if not 0 <= noise < 0.5:
        raise DataError(f"noise {noise} outside [0, 0.5)")
    c, h, w = shape
    rng = np.random.default_rng(seed)
    templates = rng.uniform(0.0, 1.0, size=(num_classes, c, h, w)).astype(np.float32)
    train_imgs, train_labels, val_imgs, val_labels = [], [], [], []
    n_train = int(round(n_per_class * 0.8))
    for cls in range(num_classes):
        jitter = rng.uniform(-noise, noise, size=(n_per_class, c, h, w)).astype(np.float32)
        samples = np.clip(templates[cls][None] + jitter, 0.0, 1.0)
        train_imgs.append(samples[:n_train])
        val_imgs.append(samples[n_train:])
        train_labels.append(np.full(n_train, cls, dtype=np.int64))
        val_labels.append(np.full(n_per_class - n_train, cls, dtype=np.int64))
    meta = {"mean": [0.0] * c, "std": [1.0] * c, "noise": noise, "seed": seed}
    train = DataSlice(np.concatenate(train_imgs), np.concatenate(train_labels),
                      name="synthetic-train", metadata=dict(meta))
    val = DataSlice(np.concatenate(val_imgs), np.concatenate(val_labels),
                    name="synthetic-val", metadata=dict(meta))
    return train, val


def _augment(imgs, rng, pad=4):
    """Horizontal flip (p=0.5 per image) + random crop from a zero-padded canvas."""
    n, c, h, w = imgs.shape
    out = np.zeros_like(imgs)
    flip = rng.random(n) < 0.5
    ys = rng.integers(0, 2 * pad + 1, size=n)
    xs = rng.integers(0, 2 * pad + 1, size=n)
    padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=imgs.dtype)
    padded[:, :, pad:pad + h, pad:pad + w] = imgs
    for i in range(n):
        crop = padded[i, :, ys[i]:ys[i] + h, xs[i]:xs[i] + w]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out


def batches(d: DataSlice, batch_size, shuffle_seed=None, augment=False):
    """Iterate (images, labels) batches covering the slice exactly once.

    With a seed, order is a seeded permutation; otherwise stored order.
    The last batch may be short. Augmentation requires a seed.
    """
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    n = len(d)
    if shuffle_seed is None:
        if augment:
            raise DataError("augmentation requires a shuffle seed")
        order = np.arange(n)
        rng = None
    else:
        rng = np.random.default_rng(shuffle_seed)
        order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        imgs = d.images[idx]
        if augment:
            imgs = _augment(imgs, rng)
        yield imgs, d.labels[idx]
