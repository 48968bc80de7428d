"""Objectives, datasets and proportional partitioning.

Parameter vectors are plain ``float64`` numpy arrays of shape ``(d,)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import data_generator


class InsufficientDataError(ValueError):
    pass


class ConstantsUnavailableError(TypeError):
    pass


def model_vector(values, dim: int | None = None) -> np.ndarray:
    """Validate and copy ``values`` into a finite float64 vector."""
    x = np.array(values, dtype=np.float64).reshape(-1)
    if dim is not None and x.shape[0] != dim:
        raise ValueError(f"expected dimension {dim}, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("model vector has non-finite entries")
    return x


@dataclass
class Dataset:
    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.points.shape[0] < 1:
            raise ValueError("dataset must contain at least one point")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
            if self.labels.shape[0] != self.points.shape[0]:
                raise ValueError("labels and points disagree in length")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class Partition:
    """Per-worker shards (index arrays into the dataset) plus sampling sizes."""

    shards: list[np.ndarray]
    capabilities: tuple[float, ...]
    weights: np.ndarray
    batch_sizes: tuple[int, ...]

    @property
    def n_workers(self) -> int:
        return len(self.shards)

    @property
    def shard_sizes(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.shards)

    @property
    def batch_weights(self) -> np.ndarray:
        """``M_i / sum(M)``, the averaging weights used by every collective."""
        m = np.asarray(self.batch_sizes, dtype=np.float64)
        return m / m.sum()


@dataclass(frozen=True)
class AssumptionConstants:
    L: float
    sigma2: float
    zeta2: float
    f_star: float
    # across-shard variance weighted by M_i / sum(M) instead of p_i
    zeta2_batch: float = field(default=0.0)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def zeta(self) -> float:
        return math.sqrt(self.zeta2)


def largest_remainder(total: int, shares: Sequence[float]) -> list[int]:
    """Split ``total`` integer units in proportion to ``shares``.

    Floors the exact quotas, then hands leftover units to the largest
    fractional parts (ties go to the lower index).
    """
    s = np.asarray(shares, dtype=np.float64)
    quotas = total * s / s.sum()
    sizes = [int(math.floor(q)) for q in quotas]
    leftover = total - sum(sizes)
    order = sorted(range(len(s)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return sizes


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def batch_sizes_proportional(base_batch: int, capabilities: Sequence[float]) -> tuple[int, ...]:
    """Batch sizes proportional to capability; the slowest worker gets ``base_batch``.

    Halves round upward, so ``base=3, C=(2, 3)`` gives ``(3, 5)``.
    """
    if base_batch < 1:
        raise ValueError("base_batch must be >= 1")
    _check_capabilities(capabilities)
    slowest = min(capabilities)
    return tuple(max(1, _round_half_up(base_batch * c / slowest)) for c in capabilities)


def _check_capabilities(capabilities: Sequence[float]) -> None:
    if len(capabilities) == 0:
        raise ValueError("need at least one worker")
    if any(not (c > 0) for c in capabilities):
        raise ValueError("capabilities must be positive")


def partition_proportional(
    dataset: Dataset,
    capabilities: Sequence[float],
    base_batch: int = 32,
    proportional_batches: bool = True,
) -> Partition:
    """Contiguous shards sized in proportion to ``capabilities``.

    With ``proportional_batches=False`` every worker samples ``base_batch``
    points per step regardless of its speed.
    """
    _check_capabilities(capabilities)
    n, workers = len(dataset), len(capabilities)
    if n < workers:
        raise InsufficientDataError(f"insufficient data: {n} points for {workers} workers")
    sizes = largest_remainder(n, capabilities)
    # every shard needs at least one point; borrow from the biggest
    for i, size in enumerate(sizes):
        if size == 0:
            donor = max(range(workers), key=lambda j: (sizes[j], -j))
            sizes[donor] -= 1
            sizes[i] = 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    shards = [np.arange(bounds[i], bounds[i + 1]) for i in range(workers)]
    weights = np.asarray(sizes, dtype=np.float64) / n
    if proportional_batches:
        batches = batch_sizes_proportional(base_batch, capabilities)
    else:
        if base_batch < 1:
            raise ValueError("base_batch must be >= 1")
        batches = (int(base_batch),) * workers
    return Partition(shards, tuple(float(c) for c in capabilities), weights, batches)


class QuadraticObjective:
    """f(x, xi) = 0.5 * ||x - xi||^2, so every gradient is ``x - mean(points)``."""

    lipschitz = 1.0

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.points = dataset.points
        self.mean = self.points.mean(axis=0)
        # mean squared distance to the global mean; loss(x) = 0.5*(|x-mean|^2 + spread)
        self._spread = float(np.mean(np.sum((self.points - self.mean) ** 2, axis=1)))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def loss(self, x: np.ndarray) -> float:
        diff = x - self.mean
        return 0.5 * (float(diff @ diff) + self._spread)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return x - self.mean

    def sample_gradient(self, x: np.ndarray, rows: np.ndarray) -> np.ndarray:
        return x - self.points[rows].mean(axis=0)

    def shard_mean(self, shard: np.ndarray) -> np.ndarray:
        return self.points[shard].mean(axis=0)

    def local_gradient(self, x: np.ndarray, shard: np.ndarray) -> np.ndarray:
        return x - self.shard_mean(shard)


class LogisticObjective:
    """Binary logistic loss log(1 + exp(-b <a, x>)) over labelled points (b in {-1, +1})."""

    def __init__(self, dataset: Dataset):
        if dataset.labels is None:
            raise ValueError("logistic objective needs labels")
        self.dataset = dataset
        self.points = dataset.points
        self.labels = dataset.labels

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def _mean_grad(self, x: np.ndarray, rows) -> np.ndarray:
        a, b = self.points[rows], self.labels[rows]
        margin = b * (a @ x)
        coef = -b * _sigmoid(-margin)
        return (coef[:, None] * a).mean(axis=0)

    def loss(self, x: np.ndarray) -> float:
        margin = self.labels * (self.points @ x)
        return float(np.mean(np.logaddexp(0.0, -margin)))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self._mean_grad(x, slice(None))

    def sample_gradient(self, x: np.ndarray, rows: np.ndarray) -> np.ndarray:
        return self._mean_grad(x, rows)

    def local_gradient(self, x: np.ndarray, shard: np.ndarray) -> np.ndarray:
        return self._mean_grad(x, shard)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


def stochastic_gradient(obj, shard: np.ndarray, x: np.ndarray, sample_indices) -> np.ndarray:
    """Mini-batch gradient over ``sample_indices`` (dataset row ids, all inside ``shard``)."""
    idx = np.asarray(sample_indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ValueError("empty sample")
    if not np.all(np.isin(idx, shard)):
        bad = idx[~np.isin(idx, shard)][0]
        raise IndexError(f"sample index {bad} lies outside the shard")
    return obj.sample_gradient(model_vector(x, obj.dim), idx)


def global_gradient(obj, partition: Partition, x: np.ndarray) -> np.ndarray:
    """sum_i p_i * grad f_i(x)."""
    x = model_vector(x, obj.dim)
    g = np.zeros_like(x)
    for p, shard in zip(partition.weights, partition.shards):
        g += p * obj.local_gradient(x, shard)
    return g


def compute_assumption_constants(obj, partition: Partition) -> AssumptionConstants:
    """Exact L, sigma^2, zeta^2 and f* for the quadratic objective."""
    if not isinstance(obj, QuadraticObjective):
        raise ConstantsUnavailableError(f"constants unavailable for {type(obj).__name__}")
    means = np.array([obj.shard_mean(s) for s in partition.shards])
    sigma2 = max(
        float(np.mean(np.sum((obj.points[s] - mu) ** 2, axis=1)))
        for s, mu in zip(partition.shards, means)
    )
    global_mean = partition.weights @ means
    dev = np.sum((means - global_mean) ** 2, axis=1)
    zeta2 = float(partition.weights @ dev)
    zeta2_batch = float(partition.batch_weights @ dev)
    return AssumptionConstants(
        L=obj.lipschitz,
        sigma2=sigma2,
        zeta2=zeta2,
        f_star=obj.loss(global_mean),
        zeta2_batch=zeta2_batch,
    )


def shard_offsets(n_workers: int, dim: int, scale: float) -> np.ndarray:
    """Worker i's shard is centred at ``scale`` along axis ``i mod dim``."""
    offsets = np.zeros((n_workers, dim))
    for i in range(n_workers):
        offsets[i, i % dim] = scale
    return offsets


def generate_dataset(
    seed: int,
    dim: int,
    shard_sizes: Sequence[int],
    offsets: np.ndarray | None = None,
    spread: float = 1.0,
    labelled: bool = False,
    exact_means: bool = False,
) -> Dataset:
    """Isotropic Gaussian shards laid out contiguously, shard i around ``offsets[i]``.

    ``exact_means`` recentres every shard so its empirical mean is exactly its
    offset, which pins zeta^2 to the offsets' spread (zero for equal offsets).
    With ``labelled=True`` labels come from a planted separator with 10% flips.
    """
    rng = data_generator(seed)
    if offsets is None:
        offsets = np.zeros((len(shard_sizes), dim))
    blocks = []
    for n, off in zip(shard_sizes, offsets):
        noise = spread * rng.standard_normal((n, dim))
        if exact_means:
            noise -= noise.mean(axis=0)
        blocks.append(off + noise)
    points = np.concatenate(blocks, axis=0)
    labels = None
    if labelled:
        w = rng.standard_normal(dim)
        labels = np.where(points @ w >= 0.0, 1.0, -1.0)
        flip = rng.random(points.shape[0]) < 0.1
        labels[flip] *= -1.0
    return Dataset(points, labels)


def save_dataset_csv(path, dataset: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in dataset.points:
            writer.writerow([repr(float(v)) for v in row])


def load_dataset_csv(path) -> Dataset:
    rows = []
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            if row:
                rows.append([float(v) for v in row])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    if len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: ragged rows")
    return Dataset(np.array(rows))
