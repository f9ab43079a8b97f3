# modules/system/data/main.py
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from core.constants import SyntheticKind
from core.exceptions import DataError, IdxFormatError
from core.module_api import ModuleInterface, ModuleMetadata

logger = logging.getLogger('data')

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Входы (n x d или n x c x h x w), метки классов и число классов"""
    inputs: np.ndarray
    labels: np.ndarray
    classes: int

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim < 2 or inputs.shape[0] < 1:
            raise DataError(f"Dataset needs at least one sample, got inputs {inputs.shape}")
        if labels.shape != (inputs.shape[0],):
            raise DataError(f"Labels shape {labels.shape} does not match {inputs.shape[0]} samples")
        if not np.all(np.isfinite(inputs)):
            raise DataError("Dataset inputs contain non-finite values")
        if labels.min() < 0 or labels.max() >= self.classes:
            raise DataError(f"Labels must lie in [0, {self.classes})")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return int(self.inputs.shape[0])

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def subset(self, index: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[index], self.labels[index], self.classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.classes)


def _balanced_counts(n: int, classes: int) -> np.ndarray:
    return np.array([n // classes + (1 if k < n % classes else 0) for k in range(classes)])


def _gaussians(counts, noise, rng):
    classes = len(counts)
    angles = 2.0 * np.pi * np.arange(classes) / classes
    centers = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    parts = [centers[k] + noise * rng.standard_normal((c, 2)) for k, c in enumerate(counts)]
    return parts


def _moons(counts, noise, rng):
    if len(counts) != 2:
        raise DataError("moons generator produces exactly 2 classes")
    outer = np.linspace(0.0, np.pi, counts[0])
    inner = np.linspace(0.0, np.pi, counts[1])
    parts = [
        np.stack([np.cos(outer), np.sin(outer)], axis=1),
        np.stack([1.0 - np.cos(inner), 0.5 - np.sin(inner)], axis=1),
    ]
    return [p + noise * rng.standard_normal(p.shape) for p in parts]


def _spirals(counts, noise, rng):
    classes = len(counts)
    parts = []
    for k, c in enumerate(counts):
        radius = np.linspace(0.1, 1.0, c)
        theta = np.linspace(0.0, 3.0 * np.pi, c) + 2.0 * np.pi * k / classes
        arm = np.stack([radius * np.sin(theta), radius * np.cos(theta)], axis=1)
        parts.append(arm + noise * rng.standard_normal(arm.shape))
    return parts


_GENERATORS = {
    SyntheticKind.GAUSSIANS.value: _gaussians,
    SyntheticKind.MOONS.value: _moons,
    SyntheticKind.SPIRALS.value: _spirals,
}


def gen_synthetic(kind: str, n: int, noise: float, seed: int, classes: int = 2) -> Dataset:
    """Детерминированный синтетический набор с балансом классов (±1)"""
    if kind not in _GENERATORS:
        raise DataError(f"Invalid synthetic kind: {kind!r}; expected one of {sorted(_GENERATORS)}")
    if classes < 2:
        raise DataError("Need at least 2 classes")
    if n < classes:
        raise DataError(f"n={n} smaller than the number of classes {classes}")
    if noise < 0:
        raise DataError("noise must be non-negative")

    rng = np.random.default_rng(seed)
    counts = _balanced_counts(n, classes)
    parts = _GENERATORS[kind](counts, noise, rng)
    inputs = np.concatenate(parts, axis=0)
    labels = np.concatenate([np.full(c, k) for k, c in enumerate(counts)])

    order = rng.permutation(n)
    return Dataset(inputs[order], labels[order], classes)


def _read_header(payload: bytes, magic: int, dims: int, what: str) -> Tuple[int, ...]:
    size = 4 * (1 + dims)
    if len(payload) < size:
        raise IdxFormatError(f"Truncated {what} header")
    values = struct.unpack(f">{1 + dims}I", payload[:size])
    if values[0] != magic:
        raise IdxFormatError(f"Bad {what} magic: 0x{values[0]:08x}, expected 0x{magic:08x}")
    return values[1:]


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path],
             classes: int = 10) -> Dataset:
    """Загрузка пары IDX файлов (изображения uint8, метки uint8)"""
    images_path, labels_path = Path(images_path), Path(labels_path)
    for path in (images_path, labels_path):
        if not path.exists():
            raise DataError(f"IDX file not found: {path}")

    image_bytes = images_path.read_bytes()
    label_bytes = labels_path.read_bytes()
    n_images, rows, cols = _read_header(image_bytes, IDX_IMAGES_MAGIC, 3, "images")
    (n_labels,) = _read_header(label_bytes, IDX_LABELS_MAGIC, 1, "labels")

    pixels = image_bytes[16:]
    if len(pixels) != n_images * rows * cols:
        raise IdxFormatError(
            f"Images payload has {len(pixels)} bytes, header declares {n_images * rows * cols}")
    raw_labels = label_bytes[8:]
    if len(raw_labels) != n_labels:
        raise IdxFormatError(f"Labels payload has {len(raw_labels)} bytes, header declares {n_labels}")
    if n_images != n_labels:
        raise IdxFormatError(f"Image count {n_images} != label count {n_labels}")

    images = np.frombuffer(pixels, dtype=np.uint8).reshape(n_images, 1, rows, cols)
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    classes = max(classes, int(labels.max()) + 1) if n_labels else classes
    logger.info(f"Loaded IDX: {n_images} images {rows}x{cols}")
    return Dataset(images / 255.0, labels, classes)


def save_idx(images: np.ndarray, labels: np.ndarray,
             images_path: Union[str, Path], labels_path: Union[str, Path]) -> None:
    """Запись изображений (n, h, w) или (n, 1, h, w) uint8 и меток в IDX"""
    images = np.asarray(images)
    if images.ndim == 4:
        images = images[:, 0]
    if images.dtype != np.uint8 or np.asarray(labels).dtype != np.uint8:
        raise IdxFormatError("IDX writer expects uint8 images and labels")
    n, rows, cols = images.shape
    Path(images_path).write_bytes(
        struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)) + np.asarray(labels).tobytes())


def split(dataset: Dataset, val_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Стратифицированное разбиение train/val"""
    if not 0.0 < val_fraction < 1.0:
        raise DataError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for k in range(dataset.classes):
        members = np.flatnonzero(dataset.labels == k)
        members = members[rng.permutation(len(members))]
        n_val = int(round(val_fraction * len(members)))
        val_idx.append(members[:n_val])
        train_idx.append(members[n_val:])

    train_idx = np.concatenate(train_idx)
    val_idx = np.concatenate(val_idx)
    train_idx = train_idx[rng.permutation(len(train_idx))]
    val_idx = val_idx[rng.permutation(len(val_idx))]
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise DataError(f"Split with fraction {val_fraction} leaves an empty part")
    return dataset.subset(train_idx), dataset.subset(val_idx)


def split_indices(dataset: Dataset, val_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Индексы разбиения (для проверки непересечения)"""
    marker = Dataset(np.arange(len(dataset), dtype=np.float64)[:, None], dataset.labels, dataset.classes)
    train, val = split(marker, val_fraction, seed)
    return train.inputs[:, 0].astype(np.int64), val.inputs[:, 0].astype(np.int64)


class DataModule(ModuleInterface):
    def setup(self, kernel):
        self.kernel = kernel
        self.metadata = ModuleMetadata(
            name="system.data",
            version="1.0.0",
            description="Синтетические наборы, IDX и разбиение train/val"
        )
        return self
