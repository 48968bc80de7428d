"""Logical iteration semantics of S-SGD, Local-SGD, Pipe-SGD and CoCoD-SGD.

Nothing here knows about time. Collectives go through the message-level ring
in :mod:`cocodlab.comm`, so the wall-clock engine in :mod:`cocodlab.timing`
reuses these primitives and produces bit-identical numerics.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .comm import CommStats, ring_allreduce_weighted
from .model import Partition
from .rng import SampleStream
from .theory import scaled_lr

VARIANTS = ("ssgd", "local", "pipe", "cocod")


@dataclass(frozen=True)
class Variant:
    """One of the four algorithms plus its communication knobs.

    ``period_schedule`` is a sequence of ``(start_step, k)`` pairs; when given
    it overrides ``period`` from each ``start_step`` on. ``final_period``
    decides what happens when T is not a multiple of k: ``"merge"`` runs a
    shorter last period, ``"truncate"`` stops at the last full period.
    """

    name: str
    period: int = 1
    staleness: int = 1
    period_schedule: tuple[tuple[int, int], ...] = ()
    final_period: str = "merge"

    def __post_init__(self):
        if self.name not in VARIANTS:
            raise ValueError(f"unknown variant {self.name!r}")
        if self.period < 1 or self.staleness < 1:
            raise ValueError("period and staleness must be >= 1")
        if any(k < 1 or s < 0 for s, k in self.period_schedule):
            raise ValueError("bad period schedule")
        if self.final_period not in ("merge", "truncate"):
            raise ValueError("final_period must be 'merge' or 'truncate'")

    @property
    def periodic(self) -> bool:
        return self.name in ("local", "cocod")

    def period_at(self, step: int) -> int:
        k = self.period
        for start, sched_k in sorted(self.period_schedule):
            if step >= start:
                k = sched_k
        return k

    def rounds(self, T: int) -> list[tuple[int, int]]:
        """``(start, length)`` of every period in a T-step run."""
        if not self.periodic:
            return [(t, 1) for t in range(T)]
        out, t = [], 0
        while t < T:
            k = self.period_at(t)
            if t + k > T:
                if self.final_period == "truncate":
                    break
                k = T - t
            out.append((t, k))
            t += k
        return out

    def horizon(self, T: int) -> int:
        """Number of steps actually executed (differs from T only when truncating)."""
        return sum(length for _, length in self.rounds(T))


def SSGD() -> Variant:
    return Variant("ssgd")


def LocalSGD(k: int) -> Variant:
    return Variant("local", period=k)


def PipeSGD(staleness: int = 1) -> Variant:
    return Variant("pipe", staleness=staleness)


def CoCoD(k: int) -> Variant:
    return Variant("cocod", period=k)


class Problem:
    """Objective + partition + sampling streams + local-update options.

    Stochastic gradients are keyed by ``(seed, worker, step)`` so any engine
    asking for worker i's gradient at step t at the same point gets the same
    vector.
    """

    def __init__(
        self,
        objective,
        partition: Partition,
        seed: int,
        full_batch: bool = False,
        momentum: float = 0.0,
        weight_decay: float = 0.0,
    ):
        self.objective = objective
        self.partition = partition
        self.seed = seed
        self.full_batch = full_batch
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_sizes = partition.batch_sizes
        self.weights = partition.batch_weights
        self.streams = [
            SampleStream(seed, i, len(shard), m)
            for i, (shard, m) in enumerate(zip(partition.shards, partition.batch_sizes))
        ]
        self._shard_means = None
        if full_batch and hasattr(objective, "shard_mean"):
            self._shard_means = [objective.shard_mean(s) for s in partition.shards]

    @property
    def n_workers(self) -> int:
        return self.partition.n_workers

    @property
    def dim(self) -> int:
        return self.objective.dim

    def sample_rows(self, worker: int, step: int) -> np.ndarray:
        return self.partition.shards[worker][self.streams[worker].indices(step)]

    def gradient(self, worker: int, x: np.ndarray, step: int) -> np.ndarray:
        """G_step^worker evaluated at ``x``."""
        if self.full_batch:
            if self._shard_means is not None:
                return x - self._shard_means[worker]
            return self.objective.local_gradient(x, self.partition.shards[worker])
        return self.objective.sample_gradient(x, self.sample_rows(worker, step))

    def apply_update(self, x, g, gamma, buf):
        """x - gamma * (momentum-filtered, decayed) g; returns ``(x_new, buf_new)``."""
        if self.momentum == 0.0 and self.weight_decay == 0.0:
            return x - gamma * g, buf
        d = g + self.weight_decay * x if self.weight_decay else g
        if self.momentum:
            buf = d.copy() if buf is None else self.momentum * buf + d
            d = buf
        return x - gamma * d, buf


@dataclass
class WorkerState:
    worker_id: int
    x: np.ndarray
    step: int = 0
    snapshot: np.ndarray | None = None
    momentum_buf: np.ndarray | None = None
    seed: int = 0

    @property
    def rng_cursor(self) -> tuple[int, int, int]:
        return (self.seed, self.worker_id, self.step)


@dataclass
class SyncRoundRecord:
    round_index: int
    start_step: int
    merge_step: int
    x_hat: np.ndarray
    elements: int


@dataclass
class PipeState:
    x: np.ndarray
    step: int = 0
    pending: deque = field(default_factory=deque)
    momentum_buf: np.ndarray | None = None


def init_workers(problem: Problem, x0: np.ndarray) -> list[WorkerState]:
    return [
        WorkerState(i, np.array(x0, dtype=np.float64), seed=problem.seed)
        for i in range(problem.n_workers)
    ]


def weighted_mean(models: Sequence[np.ndarray], batch_sizes: Sequence[int]) -> np.ndarray:
    """sum_i (M_i / sum_j M_j) x_i, computed directly (no collective)."""
    if len(models) != len(batch_sizes) or not models:
        raise ValueError("need one batch size per model")
    if any(m <= 0 for m in batch_sizes):
        raise ValueError("batch sizes must be positive")
    d = np.asarray(models[0]).shape
    if any(np.asarray(x).shape != d for x in models):
        raise ValueError("dimension mismatch among models")
    total = float(sum(batch_sizes))
    out = np.zeros(d)
    for m, x in zip(batch_sizes, models):
        out += (m / total) * np.asarray(x, dtype=np.float64)
    return out


def allreduce_mean(vectors: Sequence[np.ndarray], problem: Problem) -> tuple[np.ndarray, CommStats]:
    """Batch-weighted mean through the simulated ring (every worker gets the same copy)."""
    results, stats = ring_allreduce_weighted(vectors, problem.weights)
    return results[0], stats


def as_schedule(lr) -> Callable[[int], float]:
    if callable(lr):
        return lr
    gamma = float(lr)
    return lambda step: gamma


def local_step(state: WorkerState, problem: Problem, gamma: float) -> np.ndarray:
    """One local mini-batch SGD step; returns the gradient used."""
    g = problem.gradient(state.worker_id, state.x, state.step)
    state.x, state.momentum_buf = problem.apply_update(state.x, g, gamma, state.momentum_buf)
    state.step += 1
    return g


def merge(state: WorkerState, x_hat: np.ndarray) -> None:
    """x <- x_hat + (x - snapshot); clears the snapshot."""
    if state.snapshot is None:
        raise RuntimeError(f"worker {state.worker_id} has no snapshot to merge against")
    state.x = x_hat + (state.x - state.snapshot)
    state.snapshot = None


def ssgd_step(
    x: np.ndarray, problem: Problem, gamma: float, step: int, momentum_buf=None
) -> tuple[np.ndarray, list[np.ndarray], CommStats, np.ndarray | None]:
    """One synchronous step: all-reduce the weighted gradient, then update."""
    grads = [problem.gradient(i, x, step) for i in range(problem.n_workers)]
    g_bar, stats = allreduce_mean(grads, problem)
    x_new, momentum_buf = problem.apply_update(x, g_bar, gamma, momentum_buf)
    return x_new, grads, stats, momentum_buf


def local_sgd_round(
    states: list[WorkerState], problem: Problem, lr, k: int, on_step=None
) -> tuple[list[WorkerState], CommStats]:
    """k local steps on every worker, then a blocking model average."""
    lr = as_schedule(lr)
    t0 = states[0].step
    for tau in range(t0, t0 + k):
        grads = [local_step(s, problem, lr(tau)) for s in states]
        if on_step is not None and tau < t0 + k - 1:
            on_step(tau + 1, states, grads)
    avg, stats = allreduce_mean([s.x for s in states], problem)
    for s in states:
        s.x = avg.copy()
    if on_step is not None:
        on_step(t0 + k, states, grads)
    return states, stats


def start_round(states: list[WorkerState], problem: Problem) -> tuple[np.ndarray, CommStats]:
    """Snapshot every local model and average the snapshots."""
    for s in states:
        s.snapshot = s.x.copy()
    return allreduce_mean([s.snapshot for s in states], problem)


def cocod_round(
    states: list[WorkerState], problem: Problem, lr, k: int, round_index: int = 0, on_step=None
) -> tuple[list[WorkerState], SyncRoundRecord, CommStats]:
    """Snapshot + average (in flight) while running k local steps, then merge."""
    lr = as_schedule(lr)
    t0 = states[0].step
    x_hat, stats = start_round(states, problem)
    for tau in range(t0, t0 + k):
        grads = [local_step(s, problem, lr(tau)) for s in states]
        if on_step is not None and tau < t0 + k - 1:
            on_step(tau + 1, states, grads)
    for s in states:
        merge(s, x_hat)
    if on_step is not None:
        on_step(t0 + k, states, grads)
    record = SyncRoundRecord(round_index, t0, t0 + k, x_hat, stats.elements_sent)
    return states, record, stats


def pipe_sgd_step(
    state: PipeState, problem: Problem, gamma: float, staleness: int
) -> tuple[PipeState, list[np.ndarray], CommStats]:
    """Compute G_t at the current model, queue its average, apply the one from t - s.

    During the first ``staleness`` steps the queue is still filling and the
    model does not move.
    """
    grads = [problem.gradient(i, state.x, state.step) for i in range(problem.n_workers)]
    g_bar, stats = allreduce_mean(grads, problem)
    state.pending.append(g_bar)
    if len(state.pending) > staleness:
        stale = state.pending.popleft()
        state.x, state.momentum_buf = problem.apply_update(state.x, stale, gamma, state.momentum_buf)
    state.step += 1
    return state, grads, stats


def divergence_metric(models: Sequence[np.ndarray], batch_sizes: Sequence[int], x_hat: np.ndarray) -> float:
    """sum_i (M_i / sum M) * ||x_hat - x_i||^2."""
    total = float(sum(batch_sizes))
    return float(
        sum((m / total) * float(np.sum((x_hat - np.asarray(x)) ** 2)) for m, x in zip(batch_sizes, models))
    )


@dataclass
class LRSchedule:
    """gamma(step) = base * scale * warmup(step) * decay(step).

    Warm-up ramps linearly from the unscaled ``base`` to ``base * scale``
    over ``warmup_steps``; every decay point passed divides by ``decay_factor``.
    """

    base: float
    scale: float = 1.0
    warmup_steps: int = 0
    decay_points: tuple[int, ...] = ()
    decay_factor: float = 10.0

    def __post_init__(self):
        if not self.base > 0:
            raise ValueError("base learning rate must be positive")

    @classmethod
    def scaled(cls, base: float, capabilities: Sequence[float], reference: float | None = None, **kw):
        return cls(base, scale=scaled_lr(1.0, capabilities, reference), **kw)

    def warmup(self, step: int) -> float:
        if self.warmup_steps <= 0 or step >= self.warmup_steps:
            return 1.0
        start = 1.0 / self.scale
        return start + (1.0 - start) * step / self.warmup_steps

    def decay(self, step: int) -> float:
        passed = sum(1 for p in self.decay_points if step >= p)
        return self.decay_factor ** (-passed)

    def __call__(self, step: int) -> float:
        return self.base * self.scale * self.warmup(step) * self.decay(step)


def lr_schedule(step: int, config: LRSchedule) -> float:
    return config(step)


@dataclass
class LogicalTrace:
    """Per-step record of a run without timing.

    ``x_hat[t]`` is the batch-weighted mean of the local models after t steps;
    ``locals_[t]`` holds the local models themselves and ``grads[t]`` the
    gradients computed at step t (only when recorded).
    """

    x_hat: np.ndarray
    locals_: np.ndarray | None
    grads: np.ndarray | None
    comm: CommStats
    rounds: list[SyncRoundRecord]


def run_logical(variant: Variant, problem: Problem, lr, T: int, x0, record_locals: bool = False) -> LogicalTrace:
    """Drive the round functions for T steps with no clock attached."""
    lr = as_schedule(lr)
    x0 = np.array(x0, dtype=np.float64)
    n, d = problem.n_workers, x0.shape[0]
    horizon = variant.horizon(T)
    x_hat = np.zeros((horizon + 1, d))
    x_hat[0] = x0
    locals_ = np.zeros((horizon + 1, n, d)) if record_locals else None
    grads_rec = np.zeros((horizon, n, d)) if record_locals else None
    if record_locals:
        locals_[0] = x0
    comm = CommStats()
    rounds: list[SyncRoundRecord] = []

    def observe(t, models, grads, shared=None):
        x_hat[t] = shared if shared is not None else weighted_mean(models, problem.batch_sizes)
        if record_locals:
            locals_[t] = np.asarray(models)
            grads_rec[t - 1] = np.asarray(grads)

    if variant.name == "ssgd":
        x, buf = x0.copy(), None
        for t in range(horizon):
            x, grads, stats, buf = ssgd_step(x, problem, lr(t), t, buf)
            comm.add(stats)
            observe(t + 1, [x] * n, grads, shared=x)
    elif variant.name == "pipe":
        state = PipeState(x0.copy())
        for t in range(horizon):
            state, grads, stats = pipe_sgd_step(state, problem, lr(t), variant.staleness)
            comm.add(stats)
            observe(t + 1, [state.x] * n, grads, shared=state.x)
    else:
        states = init_workers(problem, x0)
        for r, (start, k) in enumerate(variant.rounds(T)):
            on_step = lambda t, st, g: observe(t, [s.x for s in st], g)
            if variant.name == "local":
                states, stats = local_sgd_round(states, problem, lr, k, on_step)
            else:
                states, rec, stats = cocod_round(states, problem, lr, k, r, on_step)
                rounds.append(rec)
            comm.add(stats)
    return LogicalTrace(x_hat, locals_, grads_rec, comm, rounds)


def accumulated_form(
    variant: Variant, T: int, x0, rounds: Sequence[SyncRoundRecord], grads: np.ndarray, lr, batch_sizes
) -> tuple[np.ndarray, np.ndarray]:
    """Rebuild CoCoD models from recorded gradients alone.

    With t' the start of the period before the one containing t,
    x_t^i = x_hat_{t'} - sum_{tau=t'}^{t-1} gamma_tau G_tau^i and
    x_hat_t = x_hat_{t'} - sum_{tau=t'}^{t-1} gamma_tau sum_j (M_j / sum M) G_tau^j.
    Returns ``(locals, x_hat)`` of shapes (H+1, N, d) and (H+1, d) for
    comparison with a recorded trace.
    """
    if variant.name != "cocod":
        raise ValueError("the accumulated form describes CoCoD runs only")
    lr = as_schedule(lr)
    plan = variant.rounds(T)
    if len(rounds) != len(plan):
        raise ValueError("need one round record per period")
    grads = np.asarray(grads)
    H, n, d = grads.shape
    w = np.asarray(batch_sizes, dtype=np.float64) / float(sum(batch_sizes))
    starts = [s for s, _ in plan]
    bases = [np.array(x0, dtype=np.float64)] + [r.x_hat for r in rounds]
    base_step = [0] + starts
    # scaled[t] = gamma_t * G_t, cumulative sums give every partial accumulation
    steps = np.cumsum([lr(t) * grads[t] for t in range(H)], axis=0) if H else np.zeros((0, n, d))
    cum = np.concatenate([np.zeros((1, n, d)), steps])
    locals_ = np.zeros((H + 1, n, d))
    for t in range(H + 1):
        q = sum(1 for s in starts + [H] if s <= t)  # boundaries at or before t (the run's end is one)
        t_prime, base = base_step[max(q - 1, 0)], bases[max(q - 1, 0)]
        locals_[t] = base - (cum[t] - cum[t_prime])
    x_hat = np.einsum("j,tjd->td", w, locals_)
    return locals_, x_hat
