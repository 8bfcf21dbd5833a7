"""CIFAR-10 binary loader, a synthetic pattern dataset, and class-balanced subsets."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError

CIFAR10_CLASSES = (
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
)
CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILE = "test_batch.bin"
RECORD_BYTES = 1 + 3 * 32 * 32


class CifarFormatError(InputError):
    pass


@dataclass
class LabeledDataset:
    images: np.ndarray  # (n, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    class_names: tuple = field(default_factory=tuple)
    indices: np.ndarray | None = None  # positions in the parent set, when this is a subset
    seed: int | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise InputError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.class_names and len(self.labels) and self.labels.max() >= len(self.class_names):
            raise InputError("label exceeds class count")

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def manifest(self) -> dict:
        """Indices and seed identifying a subset; ``None`` entries for a full set."""
        return {
            "seed": self.seed,
            "indices": None if self.indices is None else [int(i) for i in self.indices],
        }


def read_cifar_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse one binary batch into ``(uint8 pixels (n,3,32,32), labels)``."""
    path = Path(path)
    raw = np.fromfile(path, dtype=np.uint8)  # raises FileNotFoundError
    if raw.size % RECORD_BYTES:
        raise CifarFormatError(f"{path}: size {raw.size} is not a multiple of {RECORD_BYTES}")
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() >= len(CIFAR10_CLASSES):
        raise CifarFormatError(f"{path}: label byte {labels.max()} out of range")
    return records[:, 1:].reshape(-1, 3, 32, 32), labels


def write_cifar_batch(pixels: np.ndarray, labels, path) -> None:
    """Serialize uint8 pixels and labels in the CIFAR-10 record layout."""
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(labels), -1)
    records = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], pixels], axis=1)
    Path(path).write_bytes(records.tobytes())


def to_unit(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float64) / 255.0


def to_bytes(images: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(images) * 255.0).astype(np.uint8)


def _load_files(directory: Path, names) -> LabeledDataset:
    parts = [read_cifar_batch(directory / n) for n in names]
    pixels = np.concatenate([p for p, _ in parts])
    labels = np.concatenate([l for _, l in parts])
    return LabeledDataset(to_unit(pixels), labels, CIFAR10_CLASSES)


def load_cifar10(directory) -> tuple[LabeledDataset, LabeledDataset]:
    """Load ``data_batch_1..5.bin`` and ``test_batch.bin`` from ``directory``.

    Pixels are scaled to [0, 1] by dividing the raw bytes by 255.
    """
    directory = Path(directory)
    missing = [n for n in (*CIFAR10_TRAIN_FILES, CIFAR10_TEST_FILE) if not (directory / n).is_file()]
    if missing:
        raise FileNotFoundError(f"{directory}: missing CIFAR-10 files {missing}")
    return _load_files(directory, CIFAR10_TRAIN_FILES), _load_files(directory, (CIFAR10_TEST_FILE,))


def _pattern(cls: int, classes: int, size: int) -> np.ndarray:
    """Class template: an oriented sinusoidal grating, distinct per class."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    theta = np.pi * cls / classes
    freq = 2.0 + (cls % 3)
    g = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)))
    colors = np.array([np.cos(2 * np.pi * (cls / classes + j / 3)) for j in range(3)])
    return 0.5 + 0.25 * g[None] * (0.5 + 0.5 * np.abs(colors))[:, None, None]


def synthetic_templates(classes: int, size: int) -> np.ndarray:
    return np.stack([_pattern(c, classes, size) for c in range(classes)])


def nearest_template(images, templates) -> np.ndarray:
    """The generator's own decision rule: nearest class template in L2."""
    flat = np.asarray(images).reshape(len(images), -1)
    t = templates.reshape(len(templates), -1)
    d = (flat**2).sum(1)[:, None] - 2 * flat @ t.T + (t**2).sum(1)[None]
    return d.argmin(axis=1)


def make_synthetic(classes: int, per_class: int, size: int = 32, seed: int = 0, jitter: float = 0.05) -> LabeledDataset:
    """Class templates plus per-sample brightness shift and pixel jitter.

    Samples are ordered by class; values are clipped to [0, 1].
    """
    if classes < 2:
        raise InputError("need at least 2 classes")
    if per_class < 1:
        raise InputError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    templates = synthetic_templates(classes, size)
    labels = np.repeat(np.arange(classes), per_class)
    shift = rng.uniform(-0.05, 0.05, (len(labels), 1, 1, 1))
    images = templates[labels] + shift + rng.normal(0.0, jitter, (len(labels), 3, size, size))
    names = tuple(f"class_{c}" for c in range(classes))
    return LabeledDataset(np.clip(images, 0.0, 1.0), labels, names)


def subset(ds: LabeledDataset, n_per_class: int, seed: int) -> LabeledDataset:
    """Draw ``n_per_class`` samples of every class without replacement.

    The result is ordered by class, then by original index.
    """
    rng = np.random.default_rng(seed)
    picks = []
    for cls in range(ds.num_classes or int(ds.labels.max()) + 1):
        idx = np.flatnonzero(ds.labels == cls)
        if len(idx) < n_per_class:
            raise InputError(f"class {cls} has {len(idx)} samples, fewer than {n_per_class}")
        picks.append(np.sort(rng.choice(idx, n_per_class, replace=False)))
    indices = np.concatenate(picks)
    return LabeledDataset(ds.images[indices], ds.labels[indices], ds.class_names, indices, seed)


def save_manifest(ds: LabeledDataset, path) -> None:
    Path(path).write_text(json.dumps(ds.manifest(), sort_keys=True) + "\n")
