"""Synthetic datasets, label-skewed partitioning, and batch streams.

The Dirichlet partitioner reproduces the usual federated label-skew recipe:
for every class, agent proportions are drawn from Dirichlet(alpha * 1) and
the class's samples are dealt out by largest-remainder rounding. Small alpha
gives near single-class shards, large alpha approaches an even split.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class EmptyShardUnfixable(RuntimeError):
    """An agent ended up with zero samples and repair is impossible."""


_REDRAW_LIMIT = 100


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n, input_dim) float64 with integer labels in [0, C)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be a vector matching the number of rows")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be positive, got {self.num_classes}")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range for num_classes")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass(frozen=True)
class PartitionSpec:
    alpha: float
    n_agents: int
    seed: int

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.n_agents < 1:
            raise ValueError(f"n_agents must be positive, got {self.n_agents}")


def make_blobs(num_classes: int, per_class: int, input_dim: int, spread: float,
               seed) -> Dataset:
    """Gaussian blob classification data with class means on the unit sphere.

    Each class mean is an independent uniform draw on the sphere of radius 1
    (a normalized Gaussian vector); samples add isotropic noise with standard
    deviation `spread` per coordinate. Rows are grouped by class, class 0
    first. Deterministic in `seed`.
    """
    if num_classes < 1 or per_class < 1 or input_dim < 1:
        raise ValueError("num_classes, per_class and input_dim must all be positive")
    if spread < 0:
        raise ValueError(f"spread must be nonnegative, got {spread}")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, input_dim))
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    means /= norms
    feats = np.empty((num_classes * per_class, input_dim), dtype=np.float64)
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    for c in range(num_classes):
        block = slice(c * per_class, (c + 1) * per_class)
        feats[block] = means[c] + spread * rng.standard_normal((per_class, input_dim))
        labels[block] = c
    return Dataset(feats, labels, num_classes)


def holdout_split(d: Dataset, per_class_test: int) -> tuple[Dataset, Dataset]:
    """Split off the last per_class_test rows of every class as a test set."""
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for c in range(d.num_classes):
        idx = np.flatnonzero(d.labels == c)
        if len(idx) <= per_class_test:
            raise ValueError(f"class {c} has {len(idx)} samples, cannot hold out {per_class_test}")
        train_idx.append(idx[: len(idx) - per_class_test])
        test_idx.append(idx[len(idx) - per_class_test:])
    return d.subset(np.concatenate(train_idx)), d.subset(np.concatenate(test_idx))


def _largest_remainder_counts(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to total, closest to proportions * total.

    Floors first, then hands the remaining units to the largest fractional
    parts; ties break on the lower agent index.
    """
    target = proportions * total
    counts = np.floor(target).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        frac = target - counts
        order = np.lexsort((np.arange(len(frac)), -frac))
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(d: Dataset, spec: PartitionSpec) -> list[Dataset]:
    """Split d into one shard per agent with Dirichlet(alpha) label skew.

    Shards are disjoint, cover d exactly, and are deterministic in
    (d, spec). Every shard is guaranteed at least one sample: the proportions
    are re-drawn up to 100 times and, failing that, single samples are moved
    out of the largest shard. Raises EmptyShardUnfixable when d has fewer
    samples than there are agents.
    """
    n = spec.n_agents
    if len(d) < n:
        raise EmptyShardUnfixable(f"{len(d)} samples cannot cover {n} agents")
    rng = np.random.default_rng(spec.seed)
    class_indices = [np.flatnonzero(d.labels == c) for c in range(d.num_classes)]

    assignment: list[list[np.ndarray]] | None = None
    for _ in range(_REDRAW_LIMIT):
        attempt: list[list[np.ndarray]] = [[] for _ in range(n)]
        sizes = np.zeros(n, dtype=np.int64)
        for idx in class_indices:
            if len(idx) == 0:
                continue
            p = rng.dirichlet(np.full(n, spec.alpha))
            counts = _largest_remainder_counts(p, len(idx))
            shuffled = rng.permutation(idx)
            start = 0
            for a in range(n):
                attempt[a].append(shuffled[start: start + counts[a]])
                start += counts[a]
            sizes += counts
        assignment = attempt
        if sizes.min() > 0:
            break

    shard_idx = [np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
                 for parts in assignment]
    # repair leftover empty shards by taking one sample from the largest shard
    sizes = np.array([len(s) for s in shard_idx])
    for a in range(n):
        while sizes[a] == 0:
            donor = int(np.argmax(sizes))
            if sizes[donor] < 2:
                raise EmptyShardUnfixable("no shard has a sample to spare")
            shard_idx[a] = shard_idx[donor][-1:]
            shard_idx[donor] = shard_idx[donor][:-1]
            sizes[a] += 1
            sizes[donor] -= 1
    return [d.subset(np.sort(idx)) for idx in shard_idx]


def label_histogram(d: Dataset) -> np.ndarray:
    return np.bincount(d.labels, minlength=d.num_classes).astype(np.float64)


def skew_metric(shards: list[Dataset]) -> float:
    """Mean total-variation distance between shard and pooled label marginals.

    0 for identical per-shard label distributions, approaching 1 as shards
    become single-class out of many.
    """
    if not shards:
        raise ValueError("skew_metric needs at least one shard")
    hists = np.stack([label_histogram(s) for s in shards])
    pooled = hists.sum(axis=0)
    pooled /= pooled.sum()
    dists = []
    for h in hists:
        q = h / h.sum()
        dists.append(0.5 * np.abs(q - pooled).sum())
    return float(np.mean(dists))


class BatchStream:
    """Sequential mini-batches over a shard, reshuffled once per local epoch.

    The shard index order is permuted with the stream's own generator at the
    start of every pass; batches are consecutive slices and the final short
    batch of a pass is kept rather than dropped.
    """

    def __init__(self, shard: Dataset, batch_size: int, rng: np.random.Generator):
        if batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {batch_size}")
        if len(shard) == 0:
            raise ValueError("cannot stream batches from an empty shard")
        self.shard = shard
        self.batch_size = batch_size
        self.rng = rng
        self._order = rng.permutation(len(shard))
        self._cursor = 0

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        if self._cursor >= len(self._order):
            self._order = self.rng.permutation(len(self.shard))
            self._cursor = 0
        take = self._order[self._cursor: self._cursor + self.batch_size]
        self._cursor += self.batch_size
        return self.shard.features[take], self.shard.labels[take]


def load_csv(path: str, num_classes: int | None = None) -> Dataset:
    """Read a dataset from CSV rows of feature values followed by an integer label."""
    feats: list[list[float]] = []
    labels: list[int] = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            feats.append([float(v) for v in row[:-1]])
            labels.append(int(row[-1]))
    if not feats:
        raise ValueError(f"no data rows in {path}")
    y = np.array(labels, dtype=np.int64)
    c = num_classes if num_classes is not None else int(y.max()) + 1
    return Dataset(np.array(feats, dtype=np.float64), y, c)


def save_csv(d: Dataset, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row, label in zip(d.features, d.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
