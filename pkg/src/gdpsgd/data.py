"""Synthetic datasets, per-device partitioning and label-distribution distances."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import RejectedInput, SizingError

IID = "iid"
DIRICHLET = "dirichlet"


@dataclass
class Dataset:
    """Labelled samples. ``index`` holds stable sample ids from the parent set."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    index: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise RejectedInput("features must be (n, d) with one label per row")
        if self.class_count < 1:
            raise RejectedInput("class_count must be positive")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise RejectedInput("label outside [0, class_count)")
        if not np.all(np.isfinite(self.features)):
            raise RejectedInput("features must be finite")
        if self.index is None:
            self.index = np.arange(self.labels.size)
        self.index = np.asarray(self.index, dtype=np.int64)

    def __len__(self):
        return int(self.labels.size)

    @property
    def input_dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows], self.class_count, self.index[rows])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


@dataclass(frozen=True)
class PartitionSpec:
    mode: str = IID
    alpha: float | None = None
    device_count: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (IID, DIRICHLET):
            raise RejectedInput(f"unknown partition mode {self.mode!r}")
        if self.device_count < 1:
            raise RejectedInput("device_count must be positive")
        if self.mode == DIRICHLET and (self.alpha is None or self.alpha <= 0):
            raise RejectedInput("Dirichlet partitioning needs alpha > 0")


def generate_blobs(class_count: int, per_class: int, input_dim: int, spread: float,
                   seed: int, center_scale: float = 1.0) -> Dataset:
    """One isotropic Gaussian per class, ``per_class`` samples each.

    Class means are drawn from ``N(0, center_scale^2)``; samples are the
    mean plus ``spread`` times standard normal noise, stored class-major.
    """
    if class_count < 1 or per_class < 1 or input_dim < 1:
        raise RejectedInput("class_count, per_class and input_dim must be positive")
    if spread < 0:
        raise RejectedInput("spread must be non-negative")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, center_scale, size=(class_count, input_dim))
    labels = np.repeat(np.arange(class_count), per_class)
    noise = rng.normal(0.0, 1.0, size=(labels.size, input_dim))
    features = means[labels] + spread * noise
    return Dataset(features, labels, class_count)


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split; each class contributes ``round(test_fraction * n_c)`` test rows."""
    if not 0.0 < test_fraction < 1.0:
        raise RejectedInput("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_rows, test_rows = [], []
    for c in range(ds.class_count):
        rows = np.flatnonzero(ds.labels == c)
        rows = rows[rng.permutation(rows.size)]
        k = int(round(test_fraction * rows.size))
        test_rows.append(rows[:k])
        train_rows.append(rows[k:])
    train = np.sort(np.concatenate(train_rows))
    test = np.sort(np.concatenate(test_rows))
    return ds.subset(train), ds.subset(test)


def partition_iid(ds: Dataset, device_count: int, seed: int) -> list[Dataset]:
    """Deal each class round-robin over devices after a seeded shuffle.

    The starting device rotates with the running total so shard sizes, as
    well as per-class counts, differ by at most one.
    """
    if device_count < 1:
        raise RejectedInput("device_count must be positive")
    if len(ds) < device_count:
        raise SizingError(f"{len(ds)} samples cannot cover {device_count} devices")
    counts = ds.class_counts()
    present = counts[counts > 0]
    if present.size and device_count > present.min():
        raise SizingError(
            f"device_count {device_count} exceeds the smallest class count {present.min()}"
        )
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(device_count)]
    offset = 0
    for c in range(ds.class_count):
        rows = np.flatnonzero(ds.labels == c)
        rows = rows[rng.permutation(rows.size)]
        for k, row in enumerate(rows):
            buckets[(offset + k) % device_count].append(int(row))
        offset = (offset + rows.size) % device_count
    return [ds.subset(sorted(b)) for b in buckets]


def largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total``, closest to ``proportions * total``."""
    raw = np.asarray(proportions, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort: equal remainders go to the lower index
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition_dirichlet(ds: Dataset, device_count: int, alpha: float, seed: int) -> list[Dataset]:
    """Per class, split its samples over devices by a Dirichlet(alpha) draw.

    Counts use largest-remainder rounding. Any device left empty takes one
    sample (the last row) from the current largest shard, lowest id first.
    """
    if alpha <= 0:
        raise RejectedInput("alpha must be positive")
    if device_count < 1:
        raise RejectedInput("device_count must be positive")
    if len(ds) < device_count:
        raise SizingError(f"{len(ds)} samples cannot cover {device_count} devices")
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(device_count)]
    for c in range(ds.class_count):
        rows = np.flatnonzero(ds.labels == c)
        if rows.size == 0:
            continue
        rows = rows[rng.permutation(rows.size)]
        p = rng.dirichlet(np.full(device_count, float(alpha)))
        if not np.all(np.isfinite(p)) or p.sum() <= 0:
            p = np.zeros(device_count)
            p[rng.integers(device_count)] = 1.0
        counts = largest_remainder(p / p.sum(), rows.size)
        start = 0
        for dev, k in enumerate(counts):
            buckets[dev].extend(int(r) for r in rows[start:start + k])
            start += k
    for dev in range(device_count):
        if not buckets[dev]:
            donor = max(range(device_count), key=lambda d: (len(buckets[d]), -d))
            buckets[dev].append(buckets[donor].pop())
    return [ds.subset(sorted(b)) for b in buckets]


def partition(ds: Dataset, spec: PartitionSpec) -> list[Dataset]:
    if spec.mode == IID:
        return partition_iid(ds, spec.device_count, spec.seed)
    return partition_dirichlet(ds, spec.device_count, spec.alpha, spec.seed)


def label_distribution(shard: Dataset) -> np.ndarray:
    """Empirical class proportions of a non-empty shard."""
    if len(shard) == 0:
        raise RejectedInput("label distribution of an empty shard is undefined")
    counts = shard.class_counts().astype(np.float64)
    return counts / counts.sum()


def emd(p, q) -> float:
    """1-D earth mover's distance with ground metric ``|i - j|`` over class indices."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise RejectedInput("distributions must be 1-D and of equal length")
    return float(np.abs(np.cumsum(p) - np.cumsum(q)).sum())


def emd_matrix(distributions: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(np.asarray(distributions, dtype=np.float64), axis=1)
    return np.abs(cdf[:, None, :] - cdf[None, :, :]).sum(axis=2)


def load_csv(path, class_count: int | None = None) -> Dataset:
    """Rows are feature values followed by an integer label.

    A first line that does not parse as numbers is treated as a header.
    """
    rows = []
    with open(Path(path), newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                values = [float(v) for v in row]
            except ValueError:
                if i == 0:
                    continue
                raise RejectedInput(f"non-numeric value on line {i + 1}")
            rows.append(values)
    if not rows:
        raise RejectedInput("CSV contains no samples")
    arr = np.asarray(rows, dtype=np.float64)
    labels = arr[:, -1]
    if not np.all(labels == np.round(labels)):
        raise RejectedInput("labels must be integers")
    labels = labels.astype(np.int64)
    k = class_count if class_count is not None else int(labels.max()) + 1
    return Dataset(arr[:, :-1], labels, k)
