"""Straight-line reference implementations used to cross-check the engine.

Nothing here touches the event loop, the ring or the round helpers in
:mod:`cocodlab.algorithms`. Each variant is written out as plain loops with
direct weighted sums; only the sample streams and the objective are shared,
so both sides see the same mini-batches.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..timing import simulate_run
from .config import Experiment, ExperimentConfig, build

TOLERANCE = 1e-12


def _direct_mean(vectors, batch_sizes):
    total = float(sum(batch_sizes))
    out = np.zeros_like(vectors[0])
    for m, v in zip(batch_sizes, vectors):
        out = out + (m / total) * v
    return out


class _Sgd:
    """Plain (optionally momentum / weight-decay) update, one buffer per model."""

    def __init__(self, momentum, weight_decay):
        self.mu = momentum
        self.wd = weight_decay
        self.buf = None

    def step(self, x, g, gamma):
        if self.wd:
            g = g + self.wd * x
        if self.mu:
            self.buf = g.copy() if self.buf is None else self.mu * self.buf + g
            g = self.buf
        return x - gamma * g


def reference_trajectory(exp: Experiment) -> np.ndarray:
    """x_hat after 0..H steps, computed sequentially."""
    p = exp.problem
    v = exp.variant
    n = p.n_workers
    M = p.batch_sizes
    lr = exp.lr
    grad = p.gradient
    x0 = np.array(exp.x0, dtype=np.float64)
    out = [x0.copy()]

    if v.name == "ssgd":
        x, opt = x0.copy(), _Sgd(p.momentum, p.weight_decay)
        for t in range(exp.T):
            g = _direct_mean([grad(i, x, t) for i in range(n)], M)
            x = opt.step(x, g, lr(t))
            out.append(x.copy())
        return np.array(out)

    if v.name == "pipe":
        x, opt = x0.copy(), _Sgd(p.momentum, p.weight_decay)
        history = []
        for t in range(exp.T):
            history.append(_direct_mean([grad(i, x, t) for i in range(n)], M))
            if t >= v.staleness:
                x = opt.step(x, history[t - v.staleness], lr(t))
            out.append(x.copy())
        return np.array(out)

    xs = [x0.copy() for _ in range(n)]
    opts = [_Sgd(p.momentum, p.weight_decay) for _ in range(n)]
    t = 0
    for start, k in v.rounds(exp.T):
        assert start == t
        snap_mean = _direct_mean(xs, M)
        snaps = [x.copy() for x in xs]
        for _ in range(k):
            for i in range(n):
                xs[i] = opts[i].step(xs[i], grad(i, xs[i], t), lr(t))
            t += 1
            if t < start + k:
                out.append(_direct_mean(xs, M))
        if v.name == "local":
            avg = _direct_mean(xs, M)
            xs = [avg.copy() for _ in range(n)]
        else:
            xs = [snap_mean + (xs[i] - snaps[i]) for i in range(n)]
        out.append(_direct_mean(xs, M))
    return np.array(out)


@dataclass
class OracleReport:
    variant: str
    steps: int
    max_deviation: float
    first_divergent_step: int | None
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.first_divergent_step is None

    def summary(self) -> str:
        verdict = "PASS" if self.passed else f"FAIL (first divergent step {self.first_divergent_step})"
        return f"{self.variant}: {self.steps} steps, max deviation {self.max_deviation:.3e} -> {verdict}"


def _default_engine(exp: Experiment) -> np.ndarray:
    return simulate_run(exp.variant, exp.problem, exp.cost, exp.lr, exp.T, exp.x0).x_hat


def compare_trajectories(variant: str, a: np.ndarray, b: np.ndarray, tol: float = TOLERANCE) -> OracleReport:
    if a.shape != b.shape:
        raise ValueError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    dev = np.max(np.abs(a - b), axis=1) if a.size else np.zeros(0)
    bad = np.nonzero(~(dev <= tol))[0]
    return OracleReport(
        variant=variant,
        steps=a.shape[0] - 1,
        max_deviation=float(dev.max()) if dev.size else 0.0,
        first_divergent_step=int(bad[0]) if bad.size else None,
        tolerance=tol,
    )


def verify_oracle(config: ExperimentConfig, engine=None) -> OracleReport:
    """Run the engine and the reference on ``config``; compare x_hat per coordinate.

    ``engine`` maps an :class:`Experiment` to its (H+1, d) x_hat trajectory and
    defaults to the timed simulator.
    """
    if config.dimension > 64:
        raise ValueError("oracle check is limited to d <= 64")
    exp = build(config)
    if exp.T > 10_000:
        raise ValueError("oracle check is limited to T <= 10000")
    engine = engine or _default_engine
    ref = reference_trajectory(exp)
    # the engine draws from the same streams; rebuild so caches start cold
    got = np.asarray(engine(build(config)))
    return compare_trajectories(config.variant, got, ref)


def verify_reduction(config: ExperimentConfig) -> OracleReport:
    """S-SGD against Local-SGD with k=1 on the same data and streams."""
    ssgd = build(config.replace(variant="ssgd"))
    local = build(config.replace(variant="local", period=1, period_schedule=()))
    a = _default_engine(ssgd)
    b = _default_engine(local)
    return compare_trajectories("ssgd~local(k=1)", a, b)


def pinned_grid(T: int = 32) -> list[ExperimentConfig]:
    """The fixed cross-check grid: N in {1,2,4}, k in {1,3,5}, homogeneous and heterogeneous.

    The 24 (variant, N, capability profile) cells each check S-SGD and
    Pipe-SGD once and Local-SGD / CoCoD-SGD at every k, 48 runs in all. The
    single-worker "heterogeneous" profile just runs at a different speed.
    """
    caps = {1: [(), (2.0,)], 2: [(), (1.0, 2.0)], 4: [(), (1.0, 2.0, 1.0, 3.0)]}
    out = []
    for n in (1, 2, 4):
        for c in caps[n]:
            base = ExperimentConfig(
                seed=1234 + n, T=T, dimension=6, workers=n, capabilities=c,
                base_batch=4, points_per_unit=24, spread=1.0, shard_offset=0.5,
                x0=2.0, lr=0.05, alpha=1.0, beta=0.01,
            )
            out.append(base.replace(variant="ssgd"))
            out.append(base.replace(variant="pipe"))
            for k in (1, 3, 5):
                out.append(base.replace(variant="local", period=k))
                out.append(base.replace(variant="cocod", period=k))
    return out
