"""Dataset ingestion and query-pool bookkeeping.

Datasets are immutable after load. A ``QueryPool`` wraps a dataset whose
labels (if any) are stripped, and tracks which indices have already been
spent as oracle queries; its mutation belongs to the single attack-loop
thread.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None
    k: int
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"features must be a non-empty 2-D array, got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite entries")
        if self.k < 2:
            raise ValueError("class count must be >= 2")
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise ValueError("labels must align with features")
            if self.labels.min() < 0 or self.labels.max() >= self.k:
                raise ValueError(f"labels must lie in [0, {self.k})")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _read_be32(f, path: str, what: str) -> int:
    raw = f.read(4)
    if len(raw) != 4:
        raise FormatError(f"{path} truncated while reading {what}", what)
    return struct.unpack(">i", raw)[0]


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair; pixels scaled to [0, 1], rows flattened.

    Class count is inferred as max(label) + 1.
    """
    images_path, labels_path = str(images_path), str(labels_path)
    with open(images_path, "rb") as f:
        magic = _read_be32(f, images_path, "magic")
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"{images_path} has image magic {magic:#010x}", "magic")
        count = _read_be32(f, images_path, "count")
        rows = _read_be32(f, images_path, "rows")
        cols = _read_be32(f, images_path, "cols")
        payload = f.read(count * rows * cols)
        if len(payload) != count * rows * cols:
            raise FormatError(f"{images_path} pixel payload truncated", "pixels")
        pixels = np.frombuffer(payload, dtype=np.uint8)
    with open(labels_path, "rb") as f:
        magic = _read_be32(f, labels_path, "magic")
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"{labels_path} has label magic {magic:#010x}", "magic")
        label_count = _read_be32(f, labels_path, "count")
        raw = f.read(label_count)
        if len(raw) != label_count:
            raise FormatError(f"{labels_path} label payload truncated", "labels")
        labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    if label_count != count:
        raise FormatError(
            f"{labels_path} holds {label_count} labels for {count} images", "count"
        )
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    k = int(labels.max()) + 1 if labels.size else 2
    return Dataset(features=features, labels=labels, k=max(k, 2), name=images_path)


def load_csv(path, label_column: str | None, k: int) -> Dataset:
    """Load a headered numeric CSV; all non-label columns become features."""
    path = str(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path} is empty (header row required)", "header")
        label_idx = None
        if label_column is not None:
            if label_column not in header:
                raise FormatError(f"{path} has no column {label_column!r}", "header")
            label_idx = header.index(label_column)
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(
                    f"{path} row {lineno} has {len(row)} cells, expected {len(header)}",
                    f"row {lineno}",
                )
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise FormatError(f"{path} row {lineno} has a non-numeric cell", f"row {lineno}")
            if label_idx is not None:
                labels.append(values.pop(label_idx))
            rows.append(values)
    if not rows:
        raise FormatError(f"{path} has a header but no data rows", "rows")
    features = np.asarray(rows, dtype=np.float64)
    label_arr = None
    if label_idx is not None:
        label_arr = np.asarray(labels)
        if np.any(label_arr != np.floor(label_arr)):
            raise FormatError(f"{path} label column holds non-integer values", label_column)
        label_arr = label_arr.astype(np.int64)
        if label_arr.min() < 0 or label_arr.max() >= k:
            raise ValueError(f"{path}: labels must lie in [0, {k})")
    return Dataset(features=features, labels=label_arr, k=k, name=path)


def save_csv(dataset: Dataset, path) -> None:
    """Write a dataset back out as a headered CSV (feature columns f0..fN,
    plus a trailing 'label' column when labels are present). Floats use
    repr so a reload reproduces them exactly."""
    path = str(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        header = [f"f{i}" for i in range(dataset.dim)]
        if dataset.labels is not None:
            header.append("label")
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            if dataset.labels is not None:
                row.append(str(int(dataset.labels[i])))
            writer.writerow(row)


def synth_blobs(
    k: int,
    d: int,
    n_per_class: int,
    center_spread: float,
    noise_sd: float,
    seed: int,
) -> Dataset:
    """k isotropic Gaussian clusters with centers drawn uniformly in
    [-center_spread, center_spread]^d. Deterministic in ``seed``."""
    if k < 2 or d < 1 or n_per_class < 1:
        raise ValueError("need k >= 2, d >= 1, n_per_class >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-center_spread, center_spread, size=(k, d))
    features = np.empty((k * n_per_class, d))
    labels = np.repeat(np.arange(k), n_per_class)
    for c in range(k):
        block = centers[c] + noise_sd * rng.standard_normal((n_per_class, d))
        features[c * n_per_class : (c + 1) * n_per_class] = block
    return Dataset(features=features, labels=labels, k=k, name=f"blobs(k={k},d={d},seed={seed})")


def split(dataset: Dataset, fractions, seed: int) -> list[Dataset]:
    """Disjoint, exhaustive, seed-deterministic shuffle-then-cut split."""
    fractions = [float(f) for f in fractions]
    if any(f <= 0.0 for f in fractions):
        raise ValueError("every split fraction must be > 0")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)}, not 1")
    n = dataset.n
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.round(np.cumsum(fractions) * n).astype(int)
    bounds[-1] = n
    parts = []
    start = 0
    for i, stop in enumerate(bounds):
        idx = perm[start:stop]
        if idx.size == 0:
            raise ValueError(f"split part {i} would be empty for n={n}")
        parts.append(
            Dataset(
                features=dataset.features[idx].copy(),
                labels=None if dataset.labels is None else dataset.labels[idx].copy(),
                k=dataset.k,
                name=f"{dataset.name}[{i}]",
            )
        )
        start = stop
    return parts


@dataclass(frozen=True)
class PoolView:
    """A snapshot of the unspent part of a pool: aligned indices + features."""

    indices: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return int(self.indices.size)


@dataclass
class QueryPool:
    """Unlabeled candidate queries plus the set of indices already spent.

    Labels on the base dataset, if any, are dropped at construction; the
    attacker never sees them.
    """

    features: np.ndarray
    k: int
    name: str = ""
    spent: set = field(default_factory=set)

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "QueryPool":
        return cls(features=dataset.features, k=dataset.k, name=dataset.name)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def unspent(self) -> np.ndarray:
        """Ascending indices not yet sent as queries."""
        return np.asarray(sorted(set(range(self.n)) - self.spent), dtype=np.int64)

    def mark_spent(self, indices) -> "QueryPool":
        """Record indices as spent; re-marking any index is an error."""
        new = {int(i) for i in np.asarray(indices, dtype=np.int64)}
        if not new <= set(range(self.n)):
            raise ValueError("indices out of pool range")
        already = new & self.spent
        if already:
            raise ValueError(f"indices already spent: {sorted(already)}")
        self.spent |= new
        return self

    def view(self) -> PoolView:
        idx = self.unspent()
        return PoolView(indices=idx, features=self.features[idx])
