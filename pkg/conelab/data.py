"""Datasets: synthetic multi-mode classes, CSV and IDX loaders, jitter, splits.

CSV layout: one sample per line, ``label,f_0,f_1,...``; an optional first
line whose first cell is ``label`` is a header. IDX layout: two zero bytes,
a type byte (0x08 = unsigned byte), a dimension-count byte, one big-endian
uint32 per dimension, then the row-major payload.
"""

import csv
import gzip
import logging
import struct
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, model_validator

from .config import TrainConfig, derive_seed
from .numeric import SeededRng

logger = logging.getLogger(__name__)

# Rejection-sampling attempts per mode center before giving up.
CENTER_RETRY_CAP = 10_000

_IDX_UBYTE = 0x08


class DatasetFormatError(ValueError):
    """Raised when a dataset file does not follow its documented layout."""


class DataGenerationError(RuntimeError):
    """Raised when synthetic generation cannot satisfy its constraints."""


class Dataset(BaseModel):
    """Samples (n x d), integer labels and the class count.

    ``modes`` is filled only by the synthetic generator and holds the global
    mode index (``label * modes_per_class + m``) of each sample.
    """

    samples: np.ndarray
    labels: np.ndarray
    num_classes: int
    modes: Optional[np.ndarray] = None

    model_config = {"arbitrary_types_allowed": True}

    @model_validator(mode="after")
    def _check(self) -> "Dataset":
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be 2-D, got shape {self.samples.shape}")
        if self.labels.shape != (self.samples.shape[0],):
            raise ValueError("labels must hold one entry per sample")
        if self.num_classes <= 0:
            raise ValueError("num_classes must be positive")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")
        return self

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def dim(self) -> int:
        return int(self.samples.shape[1])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices: np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            samples=self.samples[idx],
            labels=self.labels[idx],
            num_classes=self.num_classes,
            modes=None if self.modes is None else self.modes[idx],
        )


def _draw_centers(count: int, dim: int, separation: float, rng: SeededRng) -> np.ndarray:
    half_width = separation * max(1.0, count ** (1.0 / dim))
    centers: List[np.ndarray] = []
    for idx in range(count):
        for _ in range(CENTER_RETRY_CAP):
            candidate = np.asarray(rng.uniform(-half_width, half_width, dim), dtype=np.float64)
            if all(np.linalg.norm(candidate - c) >= separation for c in centers):
                centers.append(candidate)
                break
        else:
            raise DataGenerationError(
                f"could not place mode center {idx + 1} of {count} at separation {separation} "
                f"after {CENTER_RETRY_CAP} attempts; try a smaller separation"
            )
    return np.stack(centers)


def gen_multimode(
    classes: int,
    modes_per_class: int,
    dim: int,
    n_per_mode: int,
    mode_separation: float,
    intra_mode_std: float,
    rng: SeededRng,
) -> Dataset:
    """Gaussian blobs, ``modes_per_class`` per class, with well-separated centers.

    Every pair of centers (within and across classes) is at least
    ``mode_separation`` apart. Sample order is shuffled with ``rng``.
    """
    if min(classes, modes_per_class, dim, n_per_mode) <= 0:
        raise ValueError("classes, modes_per_class, dim and n_per_mode must be positive")
    if mode_separation <= 0:
        raise ValueError("mode_separation must be positive")
    if intra_mode_std < 0:
        raise ValueError("intra_mode_std must be non-negative")

    total_modes = classes * modes_per_class
    centers = _draw_centers(total_modes, dim, mode_separation, rng)
    noise = np.asarray(rng.normal(0.0, 1.0, (total_modes, n_per_mode, dim)), dtype=np.float64)
    samples = (centers[:, None, :] + intra_mode_std * noise).reshape(-1, dim)
    modes = np.repeat(np.arange(total_modes), n_per_mode)
    labels = modes // modes_per_class

    order = rng.permutation(samples.shape[0])
    logger.debug(f"generated {samples.shape[0]} samples over {total_modes} modes")
    return Dataset(samples=samples[order], labels=labels[order], num_classes=classes, modes=modes[order])


def load_csv(path: str, num_classes: Optional[int] = None, has_header: Optional[bool] = None) -> Dataset:
    """Read a ``label,f_0,...`` file.

    ``has_header=None`` skips the first line only if its first cell is
    ``label``. Without ``num_classes`` the class count is ``max(label) + 1``.
    """
    rows: List[List[float]] = []
    labels: List[int] = []
    width: Optional[int] = None
    with open(path, newline="", encoding="utf-8") as handle:
        for line_no, record in enumerate(csv.reader(handle), start=1):
            if line_no == 1 and (has_header or (has_header is None and record and record[0].strip() == "label")):
                continue
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) < 2:
                raise DatasetFormatError(f"{path}:{line_no}: expected a label and at least one feature")
            if any(not cell.strip() for cell in record):
                raise DatasetFormatError(f"{path}:{line_no}: empty field")
            if width is None:
                width = len(record)
            elif len(record) != width:
                raise DatasetFormatError(f"{path}:{line_no}: expected {width} fields, found {len(record)}")
            try:
                label = int(record[0])
            except ValueError:
                raise DatasetFormatError(f"{path}:{line_no}: label '{record[0]}' is not an integer") from None
            try:
                features = [float(cell) for cell in record[1:]]
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{line_no}: non-numeric feature ({exc})") from None
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise DatasetFormatError(f"{path}:{line_no}: label {label} outside [0, {num_classes})")
            if not all(np.isfinite(features)):
                raise DatasetFormatError(f"{path}:{line_no}: non-finite feature")
            labels.append(label)
            rows.append(features)

    if not rows:
        raise DatasetFormatError(f"{path}: no samples")
    classes = num_classes if num_classes is not None else max(labels) + 1
    return Dataset(samples=np.asarray(rows), labels=np.asarray(labels), num_classes=classes)


def write_csv(dataset: Dataset, path: str, header: bool = False) -> None:
    """Write ``dataset`` in the ``load_csv`` layout; floats use shortest round-trip repr."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        if header:
            writer.writerow(["label"] + [f"f_{i}" for i in range(dataset.dim)])
        for label, row in zip(dataset.labels, dataset.samples):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def _read_idx(path: str) -> np.ndarray:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as handle:
        raw = handle.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DatasetFormatError(f"{path}: bad IDX magic number")
    if raw[2] != _IDX_UBYTE:
        raise DatasetFormatError(f"{path}: unsupported IDX element type 0x{raw[2]:02x}")
    ndim = raw[3]
    header_end = 4 + 4 * ndim
    if ndim == 0 or len(raw) < header_end:
        raise DatasetFormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    expected = int(np.prod(dims))
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header_end)
    if payload.size != expected:
        raise DatasetFormatError(f"{path}: payload holds {payload.size} bytes, header promises {expected}")
    return payload.reshape(dims)


def load_idx(images_path: str, labels_path: str, num_classes: Optional[int] = None) -> Dataset:
    """Pair an IDX image file with an IDX label file; pixels are scaled to [0, 1]."""
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if labels.ndim != 1:
        raise DatasetFormatError(f"{labels_path}: label file must be one-dimensional")
    if images.shape[0] != labels.shape[0]:
        raise DatasetFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    samples = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    classes = num_classes if num_classes is not None else int(labels.max(initial=0)) + 1
    return Dataset(samples=samples, labels=labels.astype(np.int64), num_classes=classes)


def augment_jitter(x: np.ndarray, noise_std: float, rng: SeededRng) -> np.ndarray:
    """Add seeded Gaussian noise; ``noise_std == 0`` returns an unchanged copy."""
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    arr = np.asarray(x, dtype=np.float64)
    if noise_std == 0:
        return arr.copy()
    return arr + np.asarray(rng.normal(0.0, noise_std, arr.shape), dtype=np.float64)


def split(dataset: Dataset, test_fraction: float, rng: SeededRng) -> Tuple[Dataset, Dataset]:
    """Shuffle, then cut ``round(n * test_fraction)`` samples off as the test set."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    n = len(dataset)
    n_test = int(round(n * test_fraction))
    if n_test == 0 or n_test == n:
        raise ValueError(f"cannot split {n} samples with test_fraction {test_fraction}")
    order = rng.permutation(n)
    train, test = dataset.subset(order[n_test:]), dataset.subset(order[:n_test])
    for name, part in (("train", train), ("test", test)):
        missing = np.flatnonzero(part.class_counts() == 0)
        if missing.size:
            raise ValueError(
                f"class {int(missing[0])} is absent from the {name} split; generate more samples per class"
            )
    return train, test


def build_datasets(config: TrainConfig) -> Tuple[Dataset, Dataset]:
    """Load ``data_path`` or generate the synthetic set, then split it."""
    if config.data_path:
        dataset = load_csv(config.data_path)
        logger.info(f"loaded {len(dataset)} samples from {config.data_path}")
    else:
        dataset = gen_multimode(
            config.data_classes,
            config.data_modes,
            config.data_dim,
            config.data_n_per_mode,
            config.data_separation,
            config.data_std,
            SeededRng(derive_seed(config.seed, "data")),
        )
    return split(dataset, config.test_fraction, SeededRng(derive_seed(config.seed, "split")))
