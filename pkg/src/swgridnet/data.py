"""CIFAR binary batches and a seeded synthetic substitute.

CIFAR-10 records are 1 label byte + 3072 pixel bytes (R plane, G plane,
B plane, each 32x32 row-major); CIFAR-100 records carry a coarse and a fine
label byte before the pixels. Pixels are scaled to [0, 1] and nothing else:
no mean/std normalization.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, CorruptDataError, DataInputError

DATA_DIR_ENV = "SWGRIDNET_DATA_DIR"
PIXELS = 3 * 32 * 32

CIFAR_FILES = {
    (10, "train"): [f"data_batch_{i}.bin" for i in range(1, 6)],
    (10, "test"): ["test_batch.bin"],
    (100, "train"): ["train.bin"],
    (100, "test"): ["test.bin"],
}
CIFAR_SUBDIRS = {10: "cifar-10-batches-bin", 100: "cifar-100-binary"}
SYNTH_MARKER = "synth.cfg"


@dataclass
class Dataset:
    images: np.ndarray  # (n, 3, H, W) float32 in [0, 1]
    labels: np.ndarray  # (n,) int64
    num_classes: int

    def __len__(self):
        return len(self.labels)

    def subset(self, n):
        return Dataset(self.images[:n], self.labels[:n], self.num_classes)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)


def record_size(variant: int) -> int:
    return PIXELS + (1 if variant == 10 else 2)


def parse_records(raw: bytes, variant: int, path="<bytes>", num_classes=None) -> Dataset:
    """Decode whole records; ``num_classes`` overrides the label range check."""
    size = record_size(variant)
    classes = variant if num_classes is None else num_classes
    whole = len(raw) // size
    if len(raw) % size:
        raise DataInputError(
            f"{path}: truncated record at byte offset {whole * size} ({len(raw) % size} of {size} bytes)",
            path, whole * size)
    recs = np.frombuffer(raw, dtype=np.uint8).reshape(whole, size)
    labels = recs[:, size - PIXELS - 1].astype(np.int64)  # CIFAR-100: fine label is the second byte
    if labels.size and labels.max() >= classes:
        bad = int(np.argmax(labels >= classes))
        raise CorruptDataError(f"{path}: label {labels[bad]} out of range at byte offset {bad * size}")
    images = recs[:, size - PIXELS:].reshape(whole, 3, 32, 32).astype(np.float32) / np.float32(255)
    return Dataset(images, labels, classes)


def default_data_dir():
    return os.environ.get(DATA_DIR_ENV)


def _resolve(directory, variant):
    d = Path(directory)
    if not (d / CIFAR_FILES[(variant, "test")][0]).exists() and (d / CIFAR_SUBDIRS[variant]).is_dir():
        return d / CIFAR_SUBDIRS[variant]
    return d


def load_cifar(directory, variant=10, split="train") -> Dataset:
    if (variant, split) not in CIFAR_FILES:
        raise ConfigurationError(f"unknown CIFAR variant/split {variant}/{split}")
    d = _resolve(directory, variant)
    parts = []
    for name in CIFAR_FILES[(variant, split)]:
        path = d / name
        if not path.is_file():
            raise DataInputError(f"{path}: missing CIFAR batch file (byte offset 0)", path, 0)
        parts.append(parse_records(path.read_bytes(), variant, path))
    return Dataset(np.concatenate([p.images for p in parts]),
                   np.concatenate([p.labels for p in parts]), variant)


def write_records(path, data: Dataset):
    """Write ``data`` in the CIFAR-10 record layout (pixels quantized to bytes)."""
    if data.images.shape[1:] != (3, 32, 32):
        raise ConfigurationError("the CIFAR record layout stores 3x32x32 images only")
    pixels = np.clip(np.rint(data.images * 255), 0, 255).astype(np.uint8).reshape(len(data), -1)
    recs = np.concatenate([data.labels.astype(np.uint8)[:, None], pixels], axis=1)
    _atomic_write(path, recs.tobytes())


def _atomic_write(path, payload: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


@dataclass
class SynthSpec:
    """Oriented-ramp images: class c is a brightness ramp at angle pi*c/classes."""

    classes: int = 2
    samples_per_class: int = 64
    image_size: int = 32
    seed: int = 0
    noise: float = 0.1
    test_samples_per_class: int = 32

    def __post_init__(self):
        if self.classes < 2 or self.samples_per_class < 1 or self.image_size < 1:
            raise ConfigurationError("synthetic set needs >= 2 classes, >= 1 sample, positive size")
        if self.noise < 0:
            raise ConfigurationError("noise must be non-negative")


def _synth_split(spec: SynthSpec, per_class: int, stream: int) -> Dataset:
    rng = np.random.default_rng([spec.seed, stream])
    S = spec.image_size
    coords = (np.arange(S, dtype=np.float64) - (S - 1) / 2) / S
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    labels = np.repeat(np.arange(spec.classes), per_class)
    rng.shuffle(labels)
    n = len(labels)
    theta = math.pi * labels / spec.classes
    ramps = np.cos(theta)[:, None, None] * xx + np.sin(theta)[:, None, None] * yy
    amp = rng.uniform(0.6, 1.0, size=(n, 1, 1, 1))
    tint = rng.uniform(0.5, 1.0, size=(n, 3, 1, 1))
    images = 0.5 + amp * tint * ramps[:, None] + spec.noise * rng.standard_normal((n, 3, S, S))
    return Dataset(np.clip(images, 0, 1).astype(np.float32), labels.astype(np.int64), spec.classes)


def generate_synth(spec: SynthSpec):
    """(train, test) datasets, fully determined by ``spec``."""
    return (_synth_split(spec, spec.samples_per_class, 0),
            _synth_split(spec, spec.test_samples_per_class, 1))


def write_synth(spec: SynthSpec, out_dir):
    """Materialize a synthetic set as ``train.bin``/``test.bin`` CIFAR-10 records."""
    if spec.image_size != 32 or spec.classes > 256:
        raise ConfigurationError("on-disk synthetic sets use 32x32 images and at most 256 classes")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test = generate_synth(spec)
    write_records(out / "train.bin", train)
    write_records(out / "test.bin", test)
    from .config import dump_fields
    _atomic_write(out / SYNTH_MARKER, dump_fields(spec).encode())
    return out


def open_dataset(directory, variant=10, split="train") -> Dataset:
    """Load either an official CIFAR directory or one written by :func:`write_synth`."""
    d = Path(directory)
    marker = d / SYNTH_MARKER
    if marker.is_file():
        from .config import load_fields
        spec = load_fields(SynthSpec, marker.read_text())
        path = d / f"{split}.bin"
        if not path.is_file():
            raise DataInputError(f"{path}: missing synthetic split (byte offset 0)", path, 0)
        return parse_records(path.read_bytes(), 10, path, num_classes=spec.classes)
    return load_cifar(d, variant, split)
