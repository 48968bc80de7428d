"""Discrete-event wall-clock simulation of the four algorithms.

Workers advance on their own clocks; barriers, collectives and merges are
events in a single heap-ordered loop. Numerics go through the primitives in
:mod:`cocodlab.algorithms`, so a timed run follows exactly the logical
trajectory of :func:`cocodlab.algorithms.run_logical`.

Overlap model: S-SGD and Local-SGD pay the full all-reduce time after their
compute barrier. Pipe-SGD and CoCoD-SGD overlap communication with compute
and are charged ``overlap_a * T_comm`` per round, added after the compute
barrier (lumped once per period for CoCoD). A CoCoD period whose overlap
charge exceeds its compute span records the excess as merge-wait idle time.
"""
from __future__ import annotations

import csv
import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import algorithms as alg
from .comm import CommStats, comm_duration
from .rng import SampleStream


class NonFiniteError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


class TargetUnreachedError(ValueError):
    pass


@dataclass(frozen=True)
class CostModel:
    """Timing parameters.

    ``comm_time`` pins T_comm per round directly and bypasses the alpha-beta
    ring formula. ``jitter`` scales each compute block by a factor drawn
    uniformly from ``[1 - jitter, 1 + jitter]``.
    """

    per_sample_time: float
    capabilities: tuple[float, ...]
    alpha: float = 0.0
    beta: float = 0.0
    overlap_a: float = 1.0
    comm_time: float | None = None
    jitter: float = 0.0

    def __post_init__(self):
        if not self.per_sample_time > 0:
            raise ValueError("per_sample_time must be positive")
        if not 0.0 <= self.overlap_a <= 1.0:
            raise ValueError("overlap_a must lie in [0, 1]")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.comm_time is not None and self.comm_time < 0:
            raise ValueError("comm_time must be nonnegative")
        if not 0.0 <= self.jitter < 1.0:
            raise ValueError("jitter must lie in [0, 1)")
        if any(c <= 0 for c in self.capabilities):
            raise ValueError("capabilities must be positive")

    def round_time(self, n: int, d: int) -> float:
        if n <= 1:
            return 0.0
        if self.comm_time is not None:
            return self.comm_time
        return comm_duration(n, d, self.alpha, self.beta)


def compute_time(worker: int, batch_size: int, cost: CostModel) -> float:
    """Seconds for one mini-batch step: per_sample_time * M_i / C_i."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    return cost.per_sample_time * batch_size / cost.capabilities[worker]


@dataclass
class TimedTrace:
    """One row per logical step 1..H plus the step-0 state in the arrays that need it.

    ``grad_norm_sq``, ``loss``, ``divergence`` and ``x_hat`` have H+1 entries
    (index t = state after t steps); ``sim_time``, ``comm_rounds`` and the idle
    arrays have H entries (row t-1 = step t).
    """

    variant: alg.Variant
    seed: int
    n_workers: int
    t_comp: float
    t_comm: float
    overlap_a: float
    sim_time: np.ndarray
    loss: np.ndarray
    grad_norm_sq: np.ndarray
    comm_rounds: np.ndarray
    idle_compute: np.ndarray
    idle_wait: np.ndarray
    x_hat: np.ndarray
    divergence: np.ndarray
    comm: CommStats
    rounds: list = field(default_factory=list)
    locals_: np.ndarray | None = None
    grads: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return len(self.sim_time)

    @property
    def idle(self) -> np.ndarray:
        return self.idle_compute + self.idle_wait

    @property
    def total_time(self) -> float:
        return float(self.sim_time[-1]) if self.steps else 0.0

    @property
    def mean_iteration_time(self) -> float:
        return self.total_time / self.steps

    def csv_rows(self):
        n = self.n_workers
        yield ["step", "sim_time_s", "loss", "grad_norm_sq", "comm_rounds"] + [
            f"idle_s_worker_{i}" for i in range(n)
        ]
        idle = self.idle
        for r in range(self.steps):
            yield [
                str(r + 1),
                repr(float(self.sim_time[r])),
                repr(float(self.loss[r + 1])),
                repr(float(self.grad_norm_sq[r + 1])),
                str(int(self.comm_rounds[r])),
            ] + [repr(float(v)) for v in idle[r]]


def write_trace_csv(trace: TimedTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(trace.csv_rows())


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Columns of a trace CSV as arrays keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    expected = ["step", "sim_time_s", "loss", "grad_norm_sq", "comm_rounds"]
    if header[:5] != expected or not all(h.startswith("idle_s_worker_") for h in header[5:]):
        raise ValueError(f"{path}: not a trace CSV (header {header})")
    cols = {}
    for j, name in enumerate(header):
        dtype = np.int64 if name in ("step", "comm_rounds") else np.float64
        cols[name] = np.array([r[j] for r in body], dtype=dtype)
    return cols


class EventLoop:
    def __init__(self):
        self.now = 0.0
        self._queue: list = []
        self._seq = itertools.count()

    def schedule(self, delay: float, fn, *args) -> None:
        heapq.heappush(self._queue, (self.now + delay, next(self._seq), fn, args))

    def run(self) -> None:
        while self._queue:
            when, _, fn, args = heapq.heappop(self._queue)
            self.now = when
            fn(*args)


class _Engine:
    def __init__(self, variant, problem, cost, lr, T, x0, record_locals):
        self.variant = variant
        self.problem = problem
        self.cost = cost
        self.lr = alg.as_schedule(lr)
        self.n = problem.n_workers
        self.d = problem.dim
        self.H = variant.horizon(T)
        self.rounds_plan = variant.rounds(T)
        self.record_locals = record_locals
        x0 = np.array(x0, dtype=np.float64)
        if x0.shape != (self.d,):
            raise ValueError(f"x0 must have dimension {self.d}")
        self.x0 = x0

        if len(cost.capabilities) != self.n:
            raise ValueError("cost model and partition disagree on worker count")
        self.c = [compute_time(i, m, cost) for i, m in enumerate(problem.batch_sizes)]
        self.t_comm = cost.round_time(self.n, self.d)
        self._jitter = (
            [SampleStream(problem.seed, (1 << 32) + i, 1, 1) for i in range(self.n)]
            if cost.jitter
            else None
        )

        H, n, d = self.H, self.n, self.d
        self.sim_time = np.zeros(H)
        self.loss = np.zeros(H + 1)
        self.gns = np.zeros(H + 1)
        self.rounds_so_far = np.zeros(H, dtype=np.int64)
        self.idle_compute = np.zeros((H, n))
        self.idle_wait = np.zeros((H, n))
        self.x_hat = np.zeros((H + 1, d))
        self.div = np.zeros(H + 1)
        self.locals_ = np.zeros((H + 1, n, d)) if record_locals else None
        self.grads = np.zeros((H, n, d)) if record_locals else None
        self.comm = CommStats()
        self.records: list = []
        self.loop = EventLoop()
        self._observe_state(0, [x0] * n, shared=x0)

    # -- bookkeeping -------------------------------------------------------
    def _duration(self, worker: int, step: int) -> float:
        if self._jitter is None:
            return self.c[worker]
        u = float(self._jitter[worker].raw(step)[0] >> np.uint64(11)) / 9007199254740992.0
        return self.c[worker] * (1.0 + self.cost.jitter * (2.0 * u - 1.0))

    def _observe_state(self, t, models, shared=None):
        x_hat = shared if shared is not None else alg.weighted_mean(models, self.problem.batch_sizes)
        self.x_hat[t] = x_hat
        obj = self.problem.objective
        loss = obj.loss(x_hat)
        if not math.isfinite(loss):
            raise NonFiniteError(t)
        self.loss[t] = loss
        g = obj.gradient(x_hat)
        self.gns[t] = float(g @ g)
        if shared is None:
            self.div[t] = alg.divergence_metric(models, self.problem.batch_sizes, x_hat)
        if self.record_locals:
            self.locals_[t] = np.asarray(models)

    def _row(self, t, models, grads, shared=None):
        """Record the state after step t (1-based) at the current time."""
        self.sim_time[t - 1] = self.loop.now
        self.rounds_so_far[t - 1] = self.comm.rounds
        if self.record_locals:
            self.grads[t - 1] = np.asarray(grads)
        self._observe_state(t, models, shared)

    def _allreduce(self, vectors):
        result, stats = alg.allreduce_mean(vectors, self.problem)
        self.comm.add(stats)
        return result

    def run(self) -> TimedTrace:
        start = {
            "ssgd": self._ssgd_step,
            "pipe": self._pipe_step,
            "local": self._period,
            "cocod": self._period,
        }[self.variant.name]
        if self.variant.name == "pipe":
            self.pipe = alg.PipeState(self.x0.copy())
        elif self.variant.periodic:
            self.states = alg.init_workers(self.problem, self.x0)
        else:
            self.x, self.buf = self.x0.copy(), None
        if self.H:
            start(0)
        self.loop.run()
        return TimedTrace(
            variant=self.variant,
            seed=self.problem.seed,
            n_workers=self.n,
            t_comp=max(self.c),
            t_comm=self.t_comm,
            overlap_a=self.cost.overlap_a,
            sim_time=self.sim_time,
            loss=self.loss,
            grad_norm_sq=self.gns,
            comm_rounds=self.rounds_so_far,
            idle_compute=self.idle_compute,
            idle_wait=self.idle_wait,
            x_hat=self.x_hat,
            divergence=self.div,
            comm=self.comm,
            rounds=self.records,
            locals_=self.locals_,
            grads=self.grads,
        )

    # -- per-step variants (shared model) ----------------------------------
    def _compute_barrier(self, t, x, then):
        """Every worker computes G_t at ``x``; ``then(grads, busy)`` fires when the last one lands."""
        grads = [None] * self.n
        busy = [0.0] * self.n
        remaining = [self.n]

        def done(i):
            grads[i] = self.problem.gradient(i, x, t)
            remaining[0] -= 1
            if remaining[0] == 0:
                then(grads, busy)

        for i in range(self.n):
            busy[i] = self._duration(i, t)
            self.loop.schedule(busy[i], done, i)

    def _straggler_idle(self, row, busy):
        span = max(busy)
        self.idle_compute[row] = [span - b for b in busy]

    def _ssgd_step(self, t):
        def after_compute(grads, busy):
            self._straggler_idle(t, busy)
            g_bar = self._allreduce(grads)
            self.loop.schedule(self.t_comm, finish, grads, g_bar)

        def finish(grads, g_bar):
            self.x, self.buf = self.problem.apply_update(self.x, g_bar, self.lr(t), self.buf)
            self._row(t + 1, [self.x] * self.n, grads, shared=self.x)
            if t + 1 < self.H:
                self._ssgd_step(t + 1)

        self._compute_barrier(t, self.x, after_compute)

    def _pipe_step(self, t):
        st = self.pipe
        s = self.variant.staleness

        def after_compute(grads, busy):
            self._straggler_idle(t, busy)
            st.pending.append(self._allreduce(grads))
            self.loop.schedule(self.cost.overlap_a * self.t_comm, finish, grads)

        def finish(grads):
            if len(st.pending) > s:
                stale = st.pending.popleft()
                st.x, st.momentum_buf = self.problem.apply_update(st.x, stale, self.lr(t), st.momentum_buf)
            st.step += 1
            self._row(t + 1, [st.x] * self.n, grads, shared=st.x)
            if t + 1 < self.H:
                self._pipe_step(t + 1)

        self._compute_barrier(t, st.x, after_compute)

    # -- periodic variants (local models) ----------------------------------
    def _period(self, r):
        start, k = self.rounds_plan[r]
        states = self.states
        cocod = self.variant.name == "cocod"
        x_hat = None
        if cocod:
            x_hat = self._allreduce_snapshots(states)
        # per-step copies, since fast workers run ahead of slow ones
        models_at = [[None] * self.n for _ in range(k)]
        grads_at = [[None] * self.n for _ in range(k)]
        finished = [0] * k
        busy = [0.0] * self.n
        idle_row = start + k - 1

        def worker_step(i, tau):
            j = tau - start
            grads_at[j][i] = alg.local_step(states[i], self.problem, self.lr(tau))
            models_at[j][i] = states[i].x
            finished[j] += 1
            if j < k - 1:
                dt = self._duration(i, tau + 1)
                busy[i] += dt
                self.loop.schedule(dt, worker_step, i, tau + 1)
            if finished[j] == self.n:
                if j < k - 1:
                    self._row(tau + 1, models_at[j], grads_at[j])
                else:
                    barrier()

        def barrier():
            span = max(busy)
            self.idle_compute[idle_row] = [span - b for b in busy]
            if cocod:
                charge = self.cost.overlap_a * self.t_comm
                wait = max(0.0, charge - span)
                self.idle_wait[idle_row] = [wait] * self.n
                self.loop.schedule(charge, merge_all)
            else:
                avg = self._allreduce([s.x for s in states])
                self.loop.schedule(self.t_comm, adopt, avg)

        def merge_all():
            for s in states:
                alg.merge(s, x_hat)
            self.records.append(alg.SyncRoundRecord(r, start, start + k, x_hat, self.comm.elements_sent))
            close()

        def adopt(avg):
            for s in states:
                s.x = avg.copy()
            close()

        def close():
            self._row(start + k, [s.x for s in states], grads_at[k - 1])
            if r + 1 < len(self.rounds_plan):
                self._period(r + 1)

        for i in range(self.n):
            busy[i] = self._duration(i, start)
            self.loop.schedule(busy[i], worker_step, i, start)

    def _allreduce_snapshots(self, states):
        x_hat, stats = alg.start_round(states, self.problem)
        self.comm.add(stats)
        return x_hat


def simulate_run(
    variant: alg.Variant,
    problem: alg.Problem,
    cost: CostModel,
    lr,
    T: int,
    x0,
    record_locals: bool = False,
) -> TimedTrace:
    """Run ``variant`` for T logical steps while advancing a simulated clock."""
    if T < 1:
        raise ValueError("T must be >= 1")
    return _Engine(variant, problem, cost, lr, T, x0, record_locals).run()


def _first_crossing(values: np.ndarray, target: float) -> int:
    hits = np.nonzero(values <= target)[0]
    if hits.size == 0:
        raise TargetUnreachedError(f"target unreached: {target!r}")
    return int(hits[0])


def crossing_step(trace: TimedTrace, target: float, metric: str = "grad_norm_sq") -> int:
    """First logical step (1-based) whose metric is at or below ``target``."""
    values = getattr(trace, metric)[1:]
    return _first_crossing(values, target) + 1


def crossing_time(trace: TimedTrace, target: float, metric: str = "grad_norm_sq") -> float:
    return float(trace.sim_time[crossing_step(trace, target, metric) - 1])


def measured_speedup(trace_1: TimedTrace, trace_n: TimedTrace, target: float, metric: str = "grad_norm_sq") -> float:
    """Wall-clock time to target with one worker over the same with N workers."""
    return crossing_time(trace_1, target, metric) / crossing_time(trace_n, target, metric)


def measured_iteration_speedup(
    trace_1: TimedTrace, trace_n: TimedTrace, target: float, metric: str = "grad_norm_sq"
) -> float:
    """Steps to target with one worker over steps to target with N workers."""
    return crossing_step(trace_1, target, metric) / crossing_step(trace_n, target, metric)


def total_idle(trace: TimedTrace) -> np.ndarray:
    """Per-worker idle seconds summed over the run."""
    return trace.idle.sum(axis=0)
