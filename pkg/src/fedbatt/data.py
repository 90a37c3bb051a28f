"""Synthetic classification data and non-IID partitioning across devices.

Features are a Gaussian mixture with one unit-variance blob per class, means
spread on a sphere so classes are separable but not trivially so. Device
shards come from per-class Dirichlet draws: small alpha concentrates each
class on few devices (strong label skew), large alpha approaches a uniform
split. A held-out fraction stays on the server for validation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_MAGIC = b"FBDS"
_VERSION = 1


@dataclass
class LabeledDataset:
    features: np.ndarray  # (samples, feature_width) float64
    labels: np.ndarray  # (samples,) int class indices
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if len(self.features) != len(self.labels):
            raise ValueError("feature rows and labels disagree")
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class PartitionPlan:
    device_indices: list[np.ndarray]  # per-device row indices into the dataset
    validation_indices: np.ndarray  # server-held rows, disjoint from all shards
    alpha: float

    def shard_sizes(self) -> list[int]:
        return [len(ix) for ix in self.device_indices]


def generate_synthetic(classes: int, samples: int, feature_width: int,
                       seed: int, radius: float = 3.0) -> LabeledDataset:
    """Gaussian-mixture dataset with near-balanced classes.

    Class means are random directions scaled to ``radius``; noise is unit
    variance, so overlap (and problem difficulty) is set by the radius.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if samples < classes:
        raise ValueError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(classes, feature_width))
    means = radius * directions / np.linalg.norm(directions, axis=1, keepdims=True)
    base, extra = divmod(samples, classes)
    labels = np.concatenate([np.full(base + (k < extra), k, dtype=np.int64)
                             for k in range(classes)])
    labels = labels[rng.permutation(samples)]
    features = means[labels] + rng.normal(size=(samples, feature_width))
    return LabeledDataset(features=features, labels=labels, num_classes=classes)


def dirichlet_partition(dataset: LabeledDataset, num_devices: int, alpha: float,
                        validation_fraction: float = 0.04,
                        seed: int = 0) -> PartitionPlan:
    """Split a dataset into per-device shards plus a server validation slice.

    The validation rows are removed first (uniform random), then each class's
    remaining rows are dealt to devices multinomially with Dirichlet(alpha)
    proportions. Any device left empty steals one row from the currently
    largest shard, lowest device id first, so every shard has >= 1 sample.
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if not 0 <= validation_fraction < 1:
        raise ValueError("validation_fraction must be in [0, 1)")
    if num_devices < 1:
        raise ValueError("num_devices must be >= 1")
    n = len(dataset)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    val_count = int(round(validation_fraction * n))
    validation = np.sort(perm[:val_count])
    remaining = np.sort(perm[val_count:])
    if len(remaining) < num_devices:
        raise ValueError(f"cannot give {num_devices} devices at least one sample "
                         f"from {len(remaining)} remaining rows")

    shards: list[list[np.ndarray]] = [[] for _ in range(num_devices)]
    labels = dataset.labels
    for k in range(dataset.num_classes):
        rows = remaining[labels[remaining] == k]
        rows = rows[rng.permutation(len(rows))]
        p = rng.dirichlet(np.full(num_devices, alpha))
        counts = rng.multinomial(len(rows), p)
        offset = 0
        for dev, c in enumerate(counts):
            if c:
                shards[dev].append(rows[offset:offset + c])
            offset += c
    merged = [np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
              for parts in shards]

    # empty-shard repair: deterministic, lowest empty device first
    for dev in range(num_devices):
        if len(merged[dev]) == 0:
            donor = max(range(num_devices), key=lambda d: (len(merged[d]), -d))
            if len(merged[donor]) <= 1:
                raise ValueError("repair impossible: donors exhausted")
            merged[dev] = merged[donor][-1:]
            merged[donor] = merged[donor][:-1]
    return PartitionPlan(device_indices=[np.sort(ix) for ix in merged],
                         validation_indices=validation, alpha=alpha)


def shard_label_entropy(dataset: LabeledDataset, plan: PartitionPlan) -> float:
    """Mean over devices of the label-distribution entropy (nats).

    Low values mean each device sees few classes, i.e. strong non-IID skew.
    """
    entropies = []
    for ix in plan.device_indices:
        counts = np.bincount(dataset.labels[ix], minlength=dataset.num_classes)
        p = counts / counts.sum()
        nz = p[p > 0]
        entropies.append(float(-(nz * np.log(nz)).sum()))
    return float(np.mean(entropies))


# ---------------------------------------------------------------------------
# flat binary dataset file
# ---------------------------------------------------------------------------

def save_dataset(dataset: LabeledDataset, path: str) -> None:
    """Write rows/cols/classes header, float64 features, then int32 labels."""
    rows, cols = dataset.features.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIIII", _MAGIC, _VERSION, rows, cols,
                            dataset.num_classes))
        f.write(dataset.features.astype("<f8").tobytes())
        f.write(dataset.labels.astype("<i4").tobytes())


def load_dataset(path: str) -> LabeledDataset:
    with open(path, "rb") as f:
        header = f.read(struct.calcsize("<4sIIII"))
        magic, version, rows, cols, classes = struct.unpack("<4sIIII", header)
        if magic != _MAGIC:
            raise ValueError(f"not a dataset file: bad magic {magic!r}")
        if version != _VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        feat = f.read(rows * cols * 8)
        lab = f.read(rows * 4)
        if len(feat) != rows * cols * 8 or len(lab) != rows * 4:
            raise ValueError("truncated dataset file")
    features = np.frombuffer(feat, dtype="<f8").reshape(rows, cols).astype(np.float64)
    labels = np.frombuffer(lab, dtype="<i4").astype(np.int64)
    return LabeledDataset(features=features, labels=labels, num_classes=classes)
