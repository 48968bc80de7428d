"""Message-level ring all-reduce and its alpha-beta cost model."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class RingTopology:
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("ring needs at least one node")

    def successor(self, i: int) -> int:
        return (i + 1) % self.n

    def predecessor(self, i: int) -> int:
        return (i - 1) % self.n


@dataclass
class CommStats:
    """Counters for one or more all-reduce invocations.

    ``elements_sent`` and ``handshakes`` are totals over all point-to-point
    transfers; for the ring each step is one transfer per worker.
    """

    rounds: int = 0
    steps_per_round: int = 0
    elements_sent: int = 0
    handshakes: int = 0
    ring: bool = True

    def add(self, other: "CommStats") -> None:
        self.rounds += other.rounds
        self.steps_per_round = other.steps_per_round
        self.elements_sent += other.elements_sent
        self.handshakes += other.handshakes
        self.ring = self.ring and other.ring


def ring_allreduce_weighted(
    vectors: Sequence[np.ndarray], weights: Sequence[float]
) -> tuple[list[np.ndarray], CommStats]:
    """Every worker ends with sum_i w_i x_i.

    Inputs are pre-scaled by their weights, then reduce-scatter (N-1 steps)
    and all-gather (N-1 steps) run over ``ceil(d/N)``-sized chunks with the
    last chunk zero-padded. When ``d < N`` a gather-to-worker-0 plus broadcast
    is used instead and the stats are flagged ``ring=False``.
    """
    n = len(vectors)
    if n == 0 or n != len(weights):
        raise ValueError("need one weight per vector")
    w = np.asarray(weights, dtype=np.float64)
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    d = np.asarray(vectors[0]).shape[0]
    if any(np.asarray(v).shape != (d,) for v in vectors):
        raise ValueError("dimension mismatch among vectors")

    if n == 1:
        return [w[0] * np.asarray(vectors[0], dtype=np.float64)], CommStats(rounds=0)
    if d < n:
        return _gather_broadcast(vectors, w)

    chunk = -(-d // n)
    bufs = np.zeros((n, n, chunk))
    for i in range(n):
        bufs[i].reshape(-1)[:d] = w[i] * vectors[i]

    topo = RingTopology(n)
    # reduce-scatter: after step s, worker i+s+1 holds partial sums of chunk i
    for s in range(n - 1):
        outgoing = [((i - s) % n, bufs[i, (i - s) % n].copy()) for i in range(n)]
        for i, (c, payload) in enumerate(outgoing):
            bufs[topo.successor(i), c] += payload
    # all-gather: worker i owns the finished chunk i+1 and passes finished chunks on
    for s in range(n - 1):
        outgoing = [((i + 1 - s) % n, bufs[i, (i + 1 - s) % n].copy()) for i in range(n)]
        for i, (c, payload) in enumerate(outgoing):
            bufs[topo.successor(i), c] = payload

    results = [bufs[i].reshape(-1)[:d].copy() for i in range(n)]
    steps = 2 * (n - 1)
    stats = CommStats(
        rounds=1,
        steps_per_round=steps,
        elements_sent=n * steps * chunk,
        handshakes=n * steps,
    )
    return results, stats


def _gather_broadcast(vectors, w) -> tuple[list[np.ndarray], CommStats]:
    n = len(vectors)
    d = np.asarray(vectors[0]).shape[0]
    total = w[0] * np.asarray(vectors[0], dtype=np.float64)
    for i in range(1, n):
        total = total + w[i] * vectors[i]
    transfers = 2 * (n - 1)
    stats = CommStats(
        rounds=1,
        steps_per_round=transfers,
        elements_sent=transfers * d,
        handshakes=transfers,
        ring=False,
    )
    return [total.copy() for _ in range(n)], stats


def comm_duration(n: int, d: int, alpha: float, beta: float) -> float:
    """Wall time of one ring all-reduce: 2(N-1) * (alpha + ceil(d/N) * beta)."""
    if n <= 1:
        return 0.0
    if d < 1 or alpha < 0 or beta < 0:
        raise ValueError("need d >= 1 and nonnegative alpha, beta")
    return 2 * (n - 1) * (alpha + math.ceil(d / n) * beta)


def comm_complexity(variant, T: int, k: int | None = None, n_workers: int | None = None) -> int:
    """Number of all-reduce rounds over ``T`` steps.

    Per-step variants communicate every step; periodic ones once per period,
    including a final partial period. A single worker never communicates.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if n_workers == 1:
        return 0
    name = getattr(variant, "name", variant)
    if name in ("ssgd", "pipe"):
        return T
    if name in ("local", "cocod"):
        if k is None:
            return len(variant.rounds(T))
        return -(-T // k)
    raise ValueError(f"unknown variant {name!r}")
