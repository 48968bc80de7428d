"""Runs, sweeps and comparisons on top of the timed simulator, with CSV output."""
from __future__ import annotations

import csv
import itertools
from pathlib import Path
from typing import Sequence

import numpy as np

from ..theory import predicted_speedup
from ..timing import (
    NonFiniteError,
    TargetUnreachedError,
    TimedTrace,
    crossing_step,
    crossing_time,
    simulate_run,
    total_idle,
    write_trace_csv,
)
from .config import ConfigError, ExperimentConfig, build

SUMMARY_COLUMNS = [
    "variant",
    "seed",
    "final_loss",
    "final_grad_norm_sq",
    "total_sim_time_s",
    "comm_rounds",
    "measured_ts",
    "predicted_ts",
    "idle_total_s",
]
SWEEP_AXES = {
    "N": "workers",
    "k": "period",
    "a": "overlap_a",
    "t_comm": "comm_time",
    "seed": "seed",
    "base_batch": "base_batch",
}
# fields that must agree between configs passed to compare()
SHARED_FIELDS = (
    "seed", "T", "epochs", "objective", "dimension", "workers", "capabilities",
    "base_batch", "proportional_sampling", "points_per_unit", "spread",
    "shard_offset", "exact_shard_means", "x0", "full_batch", "dataset_csv", "lr_rule", "lr",
    "warmup_steps", "warmup_epochs", "decay_epochs", "decay_factor",
)


class RunAborted(RuntimeError):
    def __init__(self, step: int, label: str = ""):
        super().__init__(f"run {label + ' ' if label else ''}aborted: non-finite loss at step {step}")
        self.step = step


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[h]) for h in header])


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def simulate(cfg: ExperimentConfig) -> TimedTrace:
    exp = build(cfg)
    try:
        return simulate_run(exp.variant, exp.problem, exp.cost, exp.lr, exp.T, exp.x0)
    except NonFiniteError as exc:
        raise RunAborted(exc.step, cfg.variant) from None


def summarize(trace: TimedTrace, k: int | None = None) -> dict:
    """The summary row for one timed run."""
    v = trace.variant
    n = trace.n_workers
    k = k if k is not None else (v.period if v.periodic else 1)
    return {
        "variant": v.name,
        "seed": trace.seed,
        "final_loss": float(trace.loss[-1]),
        "final_grad_norm_sq": float(trace.grad_norm_sq[-1]),
        "total_sim_time_s": trace.total_time,
        "comm_rounds": trace.comm.rounds,
        "measured_ts": n * trace.t_comp / trace.mean_iteration_time,
        "predicted_ts": predicted_speedup(v.name, n, trace.t_comp, trace.t_comm, trace.overlap_a, k),
        "idle_total_s": float(total_idle(trace).sum()),
    }


def run(cfg: ExperimentConfig, output: str | Path | None = None) -> tuple[TimedTrace, dict]:
    """Simulate one config; write ``trace.csv`` and ``summary.csv`` into the output directory."""
    trace = simulate(cfg)
    summary = summarize(trace)
    out = Path(output if output is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(trace, out / "trace.csv")
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, [summary])
    return trace, summary


def _axis_value(axis: str, raw):
    if axis in ("N", "k", "seed", "base_batch"):
        return int(raw)
    return float(raw)


def _with_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    field = SWEEP_AXES[axis]
    changes = {field: value}
    if axis == "N" and cfg.capabilities and len(set(cfg.capabilities)) > 1:
        raise ConfigError("invalid value for 'capabilities': sweeping N needs homogeneous workers")
    if axis == "N":
        changes["capabilities"] = ()
    if axis == "k":
        changes["period_schedule"] = ()
    return cfg.replace(**changes)


def _speedups(cfg: ExperimentConfig, trace: TimedTrace, baseline: TimedTrace | None) -> tuple[str, str]:
    if baseline is None or not cfg.target_grad_norm_sq:
        return "", ""
    target = cfg.target_grad_norm_sq
    try:
        is_ = crossing_step(baseline, target) / crossing_step(trace, target)
        ts = crossing_time(baseline, target) / crossing_time(trace, target)
    except TargetUnreachedError:
        return "nan", "nan"
    return is_, ts


SWEEP_COLUMNS = ["axis", "value"] + SUMMARY_COLUMNS + ["measured_is_target", "measured_ts_target"]


def sweep(cfg: ExperimentConfig, axis: str, values: Sequence, output=None) -> list[dict]:
    """One summary row per axis value.

    With ``target_grad_norm_sq`` set, iteration and time speedups to that
    target are measured against a single-worker run of the same config
    (one per seed and base batch). Sweeping ``seed`` appends a row with the mean of each column.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"non-sweepable axis '{axis}' (choose from {', '.join(SWEEP_AXES)})")
    rows = []
    baselines: dict = {}
    for raw in values:
        value = _axis_value(axis, raw)
        c = _with_axis(cfg, axis, value)
        trace = simulate(c)
        row = {"axis": axis, "value": value, **summarize(trace, c.period if trace.variant.periodic else 1)}
        baseline = None
        if c.target_grad_norm_sq:
            key = (c.seed, c.base_batch)
            if key not in baselines:
                baselines[key] = simulate(c.replace(workers=1, capabilities=(), comm_time=None))
            baseline = baselines[key]
        row["measured_is_target"], row["measured_ts_target"] = _speedups(c, trace, baseline)
        rows.append(row)
    if axis == "seed" and rows:
        mean = {"axis": axis, "value": "mean", "variant": rows[0]["variant"], "seed": "mean"}
        for col in SWEEP_COLUMNS[4:]:
            vals = [r[col] for r in rows if r[col] != ""]
            mean[col] = float(np.mean(np.asarray(vals, dtype=float))) if vals else ""
        rows.append(mean)
    if output is not None:
        out = Path(output)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    return rows


def _labels(cfgs: Sequence[ExperimentConfig]) -> list[str]:
    names = []
    for c in cfgs:
        if c.variant == "ssgd":
            names.append("ssgd")
        elif c.variant == "pipe":
            names.append(f"pipe_s{c.staleness}")
        else:
            names.append(f"{c.variant}_k{c.period}")
    seen: dict = {}
    out = []
    for name in names:
        seen[name] = seen.get(name, 0) + 1
        out.append(name if seen[name] == 1 else f"{name}_{seen[name]}")
    return out


def check_compatible(cfgs: Sequence[ExperimentConfig]) -> None:
    if len(cfgs) < 2:
        raise ConfigError("compare needs at least two configs")
    ref = cfgs[0]
    for c in cfgs[1:]:
        for name in SHARED_FIELDS:
            if getattr(c, name) != getattr(ref, name):
                raise ConfigError(f"mismatched parameter '{name}' across compared configs")


def compare(cfgs: Sequence[ExperimentConfig], seeds: Sequence[int] | None = None, output=None):
    """Seed-averaged loss curves of several variants, aligned by step and by simulated time.

    Returns ``(step_rows, time_rows, labels)``. Time alignment puts every run on
    the union of all event times and carries each loss forward from its last
    completed step (step 0 before the first one).
    """
    check_compatible(cfgs)
    seeds = list(seeds) if seeds else [cfgs[0].seed]
    labels = _labels(cfgs)
    traces = {lab: [simulate(c.replace(seed=s)) for s in seeds] for lab, c in zip(labels, cfgs)}

    H = min(tr.steps for runs in traces.values() for tr in runs)
    step_rows = []
    for t in range(H + 1):
        row = {"step": t}
        for lab, runs in traces.items():
            row[f"loss_{lab}"] = float(np.mean([tr.loss[t] for tr in runs]))
        step_rows.append(row)

    grid = sorted({0.0} | set(itertools.chain.from_iterable(
        tr.sim_time.tolist() for runs in traces.values() for tr in runs)))
    time_rows = []
    for when in grid:
        row = {"sim_time_s": when}
        for lab, runs in traces.items():
            vals = []
            for tr in runs:
                done = int(np.searchsorted(tr.sim_time, when, side="right"))
                vals.append(tr.loss[done])
            row[f"loss_{lab}"] = float(np.mean(vals))
        time_rows.append(row)

    if output is not None:
        out = Path(output)
        out.mkdir(parents=True, exist_ok=True)
        cols = [f"loss_{lab}" for lab in labels]
        write_csv(out / "compare_by_step.csv", ["step"] + cols, step_rows)
        write_csv(out / "compare_by_time.csv", ["sim_time_s"] + cols, time_rows)
    return step_rows, time_rows, labels


PREDICT_COLUMNS = ["variant", "N", "t_comp", "t_comm", "a", "k", "predicted_ts"]


def predict_grid(ns, tcomps, tcomms, as_, ks) -> list[dict]:
    rows = []
    for n, tc, tm, a, k in itertools.product(ns, tcomps, tcomms, as_, ks):
        for v in ("ssgd", "pipe", "local", "cocod"):
            rows.append({
                "variant": v, "N": n, "t_comp": tc, "t_comm": tm, "a": a, "k": k,
                "predicted_ts": predicted_speedup(v, n, tc, tm, a, k),
            })
    return rows
