"""Datasets: synthetic Gaussian benchmarks, IDX and CSV ingestion,
standardization, and minibatch iteration.

Features are float64 matrices of shape (n, dim); labels, when present, are
1-based class ids. Generated data is raw; call standardize() with statistics
fitted on the ID training split before handing anything to a model.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .rng import RngStream

__all__ = [
    "Normalization",
    "Dataset",
    "Batch",
    "basis_means",
    "gen_gaussian_clusters",
    "gen_uniform_ood",
    "gen_shifted_gaussian_ood",
    "gen_gaussian_noise_ood",
    "load_idx",
    "load_csv",
    "save_csv",
    "standardize",
    "batch_iter",
]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Normalization:
    """Per-feature affine statistics: transformed = (x - mean) / std."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be 1-d arrays of equal length")
        if np.any(self.std <= 0.0):
            raise ValueError("std entries must be strictly positive")


@dataclass
class Dataset:
    """A named feature matrix with optional 1-based labels."""

    name: str
    features: np.ndarray
    labels: np.ndarray | None = None
    normalization: Normalization | None = None

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64, order="C")
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValueError(f"features must be a non-empty 2-d matrix, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"dataset {self.name!r} contains non-finite features")
        feats.setflags(write=False)
        self.features = feats
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (feats.shape[0],):
                raise ValueError(
                    f"labels must have shape ({feats.shape[0]},), got {labels.shape}"
                )
            if not np.issubdtype(labels.dtype, np.integer):
                raise ValueError("labels must be integers")
            if np.any(labels < 1):
                raise ValueError("class labels are 1-based; found a label below 1")
            labels = labels.astype(np.int64)
            labels.setflags(write=False)
            self.labels = labels

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def feature_range(self) -> tuple[float, float]:
        return float(self.features.min()), float(self.features.max())


def basis_means(num_classes: int, dim: int, mean_scale: float = 1.0) -> np.ndarray:
    """Class means on scaled standard-basis directions. Needs dim >= num_classes."""
    if num_classes > dim:
        raise ValueError(f"cannot place {num_classes} basis means in {dim} dimensions")
    means = np.zeros((num_classes, dim))
    means[np.arange(num_classes), np.arange(num_classes)] = mean_scale
    return means


def gen_gaussian_clusters(
    means,
    n_per_class: int,
    sigma: float,
    seed: int,
    name: str = "clusters",
) -> Dataset:
    """Isotropic Gaussian blobs, one per class, labels 1..k in row order."""
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2:
        raise ValueError(f"means must be (num_classes, dim), got shape {means.shape}")
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    for i in range(len(means)):
        for j in range(i + 1, len(means)):
            if np.array_equal(means[i], means[j]):
                raise ValueError(f"class means {i} and {j} coincide")
    k, dim = means.shape
    rng = RngStream(seed, f"data/{name}")
    features = np.repeat(means, n_per_class, axis=0) + sigma * rng.normal((k * n_per_class, dim))
    labels = np.repeat(np.arange(1, k + 1), n_per_class)
    return Dataset(name, features, labels)


def gen_uniform_ood(n: int, dim: int, low: float, high: float, seed: int, name: str = "uniform") -> Dataset:
    """Points drawn uniformly from the box [low, high)^dim."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not high > low:
        raise ValueError("uniform box needs high > low")
    rng = RngStream(seed, f"data/{name}")
    return Dataset(name, rng.uniform(low, high, (n, dim)))


def gen_shifted_gaussian_ood(
    n: int,
    dim: int,
    offset: float,
    sigma: float,
    seed: int,
    name: str = "shifted_gaussian",
) -> Dataset:
    """An isotropic Gaussian centered at offset * (1, ..., 1): near-manifold OOD."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    rng = RngStream(seed, f"data/{name}")
    return Dataset(name, offset + sigma * rng.normal((n, dim)))


def gen_gaussian_noise_ood(
    n: int,
    stats: Normalization,
    seed: int,
    name: str = "gaussian_noise",
) -> Dataset:
    """Gaussian noise matching the ID per-feature mean and std but with no
    class structure; the standard validation OOD set."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = RngStream(seed, f"data/{name}")
    return Dataset(name, stats.mean + stats.std * rng.normal((n, stats.mean.size)))


def _read_idx_header(raw: bytes, path, expected_magic: int, n_dims: int) -> tuple[int, ...]:
    header_len = 4 * (1 + n_dims)
    if len(raw) < header_len:
        raise ValueError(f"{path}: truncated IDX header ({len(raw)} bytes)")
    fields = struct.unpack(f">{1 + n_dims}I", raw[:header_len])
    if fields[0] != expected_magic:
        raise ValueError(
            f"{path}: bad IDX magic 0x{fields[0]:08x} at offset 0 (expected 0x{expected_magic:08x})"
        )
    return fields[1:]


def load_idx(images_path, labels_path=None, name: str | None = None) -> Dataset:
    """Load an IDX image file (and optional IDX label file) as a dataset.

    Pixels are scaled to [0, 1] and flattened to rows. Label bytes b become
    class ids b + 1, keeping labels 1-based package-wide.
    """
    images_path = Path(images_path)
    raw = images_path.read_bytes()
    n, rows, cols = _read_idx_header(raw, images_path, IDX_IMAGE_MAGIC, 3)
    expected = 16 + n * rows * cols
    if len(raw) != expected:
        raise ValueError(
            f"{images_path}: expected {expected} bytes for {n} images of {rows}x{cols}, found {len(raw)}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows * cols)
    features = pixels.astype(np.float64) / 255.0

    labels = None
    if labels_path is not None:
        labels_path = Path(labels_path)
        raw_labels = labels_path.read_bytes()
        (n_labels,) = _read_idx_header(raw_labels, labels_path, IDX_LABEL_MAGIC, 1)
        if len(raw_labels) != 8 + n_labels:
            raise ValueError(
                f"{labels_path}: expected {8 + n_labels} bytes for {n_labels} labels, found {len(raw_labels)}"
            )
        if n_labels != n:
            raise ValueError(f"{labels_path}: {n_labels} labels for {n} images")
        labels = np.frombuffer(raw_labels, dtype=np.uint8, offset=8).astype(np.int64) + 1

    return Dataset(name or images_path.stem, features, labels)


def load_csv(path, has_labels: bool = False, name: str | None = None) -> Dataset:
    """Load a headed CSV of float features, optionally with a trailing integer
    label column. Malformed cells are reported with line and column numbers."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    lines = [line for line in lines if line.strip()]
    if len(lines) < 2:
        raise ValueError(f"{path}: need a header line and at least one data row")
    n_cols = len(lines[0].split(","))
    if has_labels and n_cols < 2:
        raise ValueError(f"{path}: labeled data needs at least 2 columns, header has {n_cols}")

    rows = []
    labels = []
    for line_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != n_cols:
            raise ValueError(f"{path}: line {line_no}: expected {n_cols} columns, got {len(cells)}")
        values = []
        for col, cell in enumerate(cells, start=1):
            try:
                values.append(float(cell))
            except ValueError:
                raise ValueError(
                    f"{path}: line {line_no}: column {col}: {cell.strip()!r} is not numeric"
                ) from None
        if has_labels:
            label = values.pop()
            if label != int(label):
                raise ValueError(
                    f"{path}: line {line_no}: label {label!r} is not an integer"
                )
            labels.append(int(label))
        rows.append(values)

    features = np.array(rows, dtype=np.float64)
    return Dataset(
        name or path.stem,
        features,
        np.array(labels, dtype=np.int64) if has_labels else None,
    )


def save_csv(dataset: Dataset, path) -> None:
    """Inverse of load_csv: header x1..xD (plus label), floats via repr so a
    round trip reproduces every value exactly."""
    header = [f"x{i + 1}" for i in range(dataset.dim)]
    if dataset.labels is not None:
        header.append("label")
    lines = [",".join(header)]
    for i in range(len(dataset)):
        cells = [repr(float(v)) for v in dataset.features[i]]
        if dataset.labels is not None:
            cells.append(str(int(dataset.labels[i])))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def standardize(dataset: Dataset, stats: Normalization | None = None) -> tuple[Dataset, Normalization]:
    """Shift and scale features to zero mean and unit variance.

    Without ``stats`` the statistics are fitted on this dataset (per-feature
    std floored at 1e-8); pass the ID training statistics to transform every
    other split consistently.
    """
    if stats is None:
        mean = dataset.features.mean(axis=0)
        std = np.maximum(dataset.features.std(axis=0), 1e-8)
        stats = Normalization(mean, std)
    if stats.mean.size != dataset.dim:
        raise ValueError(f"statistics are {stats.mean.size}-dimensional, data is {dataset.dim}-dimensional")
    transformed = (dataset.features - stats.mean) / stats.std
    return Dataset(dataset.name, transformed, dataset.labels, stats), stats


class Batch(NamedTuple):
    features: np.ndarray
    labels: np.ndarray | None
    indices: np.ndarray


def batch_iter(dataset: Dataset, batch_size: int, shuffle_seed: int, epoch: int) -> Iterator[Batch]:
    """Minibatches in a fresh per-epoch shuffle order; the last batch may be
    short. The order depends only on (shuffle_seed, epoch)."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    order = RngStream(shuffle_seed, f"shuffle/epoch{int(epoch)}").permutation(len(dataset))
    for start in range(0, len(dataset), batch_size):
        idx = order[start : start + batch_size]
        labels = dataset.labels[idx] if dataset.labels is not None else None
        yield Batch(dataset.features[idx], labels, idx)
