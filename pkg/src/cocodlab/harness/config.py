"""Experiment configuration: INI files with one section per subsystem.

Keys are unique across sections, so ``--set key=value`` works without a
section prefix (``--set algorithm.period=5`` is accepted too). Anything not
listed in :data:`SCHEMA` is rejected by name.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import algorithms as alg
from .. import model
from ..theory import corollary_lr
from ..timing import CostModel


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    text = text.strip()
    return tuple(float(v) for v in text.split(",")) if text else ()


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str) -> float | None:
    text = text.strip()
    return None if text in ("", "none") else float(text)


def _schedule(text: str) -> tuple[tuple[float, int], ...]:
    """``"0:1,10:5"`` -> ((0.0, 1), (10.0, 5)); epoch-indexed period switches."""
    out = []
    for item in filter(None, (p.strip() for p in text.split(","))):
        epoch, k = item.split(":")
        out.append((float(epoch), int(k)))
    return tuple(out)


# section -> key -> parser
SCHEMA = {
    "run": {
        "seed": int,
        "T": int,
        "epochs": float,
        "output": str,
        "target_grad_norm_sq": float,
    },
    "model": {
        "objective": str,
        "dimension": int,
        "workers": int,
        "capabilities": _floats,
        "base_batch": int,
        "proportional_sampling": _bool,
        "points_per_unit": int,
        "spread": float,
        "shard_offset": float,
        "exact_shard_means": _bool,
        "x0": float,
        "full_batch": _bool,
        "dataset_csv": str,
    },
    "algorithm": {
        "variant": str,
        "period": int,
        "staleness": int,
        "period_schedule": _schedule,
        "final_period": str,
        "lr_rule": str,
        "lr": float,
        "warmup_steps": int,
        "warmup_epochs": float,
        "decay_epochs": _floats,
        "decay_factor": float,
        "momentum": float,
        "weight_decay": float,
    },
    "timing": {
        "per_sample_time": float,
        "alpha": float,
        "beta": float,
        "overlap_a": float,
        "comm_time": _optional_float,
        "jitter": float,
    },
}
SECTION_OF = {key: sec for sec, keys in SCHEMA.items() for key in keys}


@dataclass
class ExperimentConfig:
    # run
    seed: int = 0
    T: int = 0
    epochs: float = 0.0
    output: str = "out"
    target_grad_norm_sq: float = 0.0
    # model
    objective: str = "quadratic"
    dimension: int = 10
    workers: int = 1
    capabilities: tuple[float, ...] = ()
    base_batch: int = 32
    proportional_sampling: bool = True
    points_per_unit: int = 64
    spread: float = 1.0
    shard_offset: float = 0.0
    exact_shard_means: bool = False
    x0: float = 5.0
    full_batch: bool = False
    dataset_csv: str = ""
    # algorithm
    variant: str = "cocod"
    period: int = 1
    staleness: int = 1
    period_schedule: tuple[tuple[float, int], ...] = ()
    final_period: str = "merge"
    lr_rule: str = "fixed"
    lr: float = 0.01
    warmup_steps: int = 0
    warmup_epochs: float = 0.0
    decay_epochs: tuple[float, ...] = ()
    decay_factor: float = 10.0
    momentum: float = 0.0
    weight_decay: float = 0.0
    # timing
    per_sample_time: float = 1.0
    alpha: float = 0.0
    beta: float = 0.0
    overlap_a: float = 1.0
    comm_time: float | None = None
    jitter: float = 0.0

    def __post_init__(self):
        self.validate()

    @property
    def caps(self) -> tuple[float, ...]:
        return self.capabilities if self.capabilities else (1.0,) * self.workers

    def validate(self) -> None:
        def bad(key, why):
            raise ConfigError(f"invalid value for '{key}': {why}")

        if self.capabilities and len(self.capabilities) != self.workers:
            bad("capabilities", f"{len(self.capabilities)} entries for {self.workers} workers")
        if self.workers < 1:
            bad("workers", "need at least one worker")
        if any(c <= 0 for c in self.caps):
            bad("capabilities", "must be positive")
        if self.T < 0 or self.epochs < 0:
            bad("T", "must be nonnegative")
        if self.T == 0 and self.epochs == 0:
            bad("T", "set T or epochs")
        if not 0 <= self.seed < 2**64:
            bad("seed", "must fit in 64 bits")
        if self.objective not in ("quadratic", "logistic"):
            bad("objective", self.objective)
        if self.variant not in alg.VARIANTS:
            bad("variant", self.variant)
        if self.final_period not in ("merge", "truncate"):
            bad("final_period", self.final_period)
        if self.lr_rule not in ("fixed", "corollary", "scaled"):
            bad("lr_rule", self.lr_rule)
        if self.lr_rule == "corollary" and self.objective != "quadratic":
            bad("lr_rule", "corollary step size needs the quadratic objective")
        if self.dimension < 1:
            bad("dimension", "must be >= 1")
        if self.base_batch < 1:
            bad("base_batch", "must be >= 1")
        if self.period < 1:
            bad("period", "must be >= 1")
        if self.staleness < 1:
            bad("staleness", "must be >= 1")
        if not 0 <= self.overlap_a <= 1:
            bad("overlap_a", "must lie in [0, 1]")
        if self.per_sample_time <= 0:
            bad("per_sample_time", "must be positive")
        if not self.lr > 0:
            bad("lr", "must be positive")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_ini(self) -> str:
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            for key in keys:
                lines.append(f"{key} = {_format(getattr(self, key))}")
            lines.append("")
        return "\n".join(lines)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{e!r}:{k}" for e, k in value)
        return ",".join(repr(v) for v in value)
    return str(value)


def parse_assignments(pairs: Sequence[tuple[str, str]]) -> dict:
    """Turn ``(key, raw)`` pairs (key optionally ``section.key``) into typed values."""
    values = {}
    for key, raw in pairs:
        section = None
        if "." in key:
            section, key = key.split(".", 1)
        if key not in SECTION_OF or (section is not None and SECTION_OF[key] != section):
            raise ConfigError(f"unknown config key '{key if section is None else section + '.' + key}'")
        try:
            values[key] = SCHEMA[SECTION_OF[key]][key](raw)
        except ValueError as exc:
            raise ConfigError(f"invalid value for '{key}': {exc}") from None
    return values


def load_config(path=None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Read an INI file (optional) and apply ``key=value`` overrides on top."""
    pairs: list[tuple[str, str]] = []
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        if not parser.read(path):
            raise ConfigError(f"cannot read config file {path}")
        for sec in parser.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown config section '{sec}'")
            for key, raw in parser.items(sec):
                pairs.append((f"{sec}.{key}", raw))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        pairs.append((key.strip(), raw.strip()))
    values = parse_assignments(pairs)
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class Experiment:
    """Everything a run needs, materialised from a config."""

    config: ExperimentConfig
    problem: alg.Problem
    variant: alg.Variant
    cost: CostModel
    lr: alg.LRSchedule
    T: int
    x0: np.ndarray
    steps_per_epoch: int
    constants: model.AssumptionConstants | None = field(default=None)


def build_dataset(cfg: ExperimentConfig) -> model.Dataset:
    if cfg.dataset_csv:
        ds = model.load_dataset_csv(cfg.dataset_csv)
        if ds.dim != cfg.dimension:
            raise ConfigError(f"invalid value for 'dataset_csv': dimension {ds.dim} != {cfg.dimension}")
        return ds
    caps = cfg.caps
    total = math.ceil(cfg.points_per_unit * sum(caps) / min(caps))
    sizes = model.largest_remainder(total, caps)
    offsets = model.shard_offsets(cfg.workers, cfg.dimension, cfg.shard_offset)
    return model.generate_dataset(
        cfg.seed, cfg.dimension, sizes, offsets, cfg.spread,
        labelled=cfg.objective == "logistic", exact_means=cfg.exact_shard_means,
    )


def build(cfg: ExperimentConfig) -> Experiment:
    caps = cfg.caps
    dataset = build_dataset(cfg)
    try:
        partition = model.partition_proportional(dataset, caps, cfg.base_batch, cfg.proportional_sampling)
    except model.InsufficientDataError as exc:
        raise ConfigError(f"invalid value for 'points_per_unit': {exc}") from None
    objective = (
        model.QuadraticObjective(dataset) if cfg.objective == "quadratic" else model.LogisticObjective(dataset)
    )
    problem = alg.Problem(objective, partition, cfg.seed, cfg.full_batch, cfg.momentum, cfg.weight_decay)

    steps_per_epoch = max(-(-n // m) for n, m in zip(partition.shard_sizes, partition.batch_sizes))
    T = cfg.T if cfg.T else math.ceil(cfg.epochs * steps_per_epoch)
    schedule = tuple((int(round(e * steps_per_epoch)), k) for e, k in cfg.period_schedule)
    variant = alg.Variant(cfg.variant, cfg.period, cfg.staleness, schedule, cfg.final_period)

    constants = None
    if cfg.objective == "quadratic":
        constants = model.compute_assumption_constants(objective, partition)

    warmup = cfg.warmup_steps or int(round(cfg.warmup_epochs * steps_per_epoch))
    decay = tuple(int(round(e * steps_per_epoch)) for e in cfg.decay_epochs)
    if cfg.lr_rule == "fixed":
        lr = alg.LRSchedule(cfg.lr, 1.0, warmup, decay, cfg.decay_factor)
    elif cfg.lr_rule == "scaled":
        lr = alg.LRSchedule.scaled(
            cfg.lr, caps, reference=min(caps), warmup_steps=warmup, decay_points=decay, decay_factor=cfg.decay_factor
        )
    else:
        if constants.sigma2 <= 0:
            raise ConfigError("invalid value for 'lr_rule': corollary step size needs sigma > 0")
        gamma = corollary_lr(constants.sigma, T, sum(partition.batch_sizes))
        lr = alg.LRSchedule(gamma, 1.0, warmup, decay, cfg.decay_factor)

    cost = CostModel(
        per_sample_time=cfg.per_sample_time,
        capabilities=tuple(caps),
        alpha=cfg.alpha,
        beta=cfg.beta,
        overlap_a=cfg.overlap_a,
        comm_time=cfg.comm_time,
        jitter=cfg.jitter,
    )
    x0 = np.full(cfg.dimension, cfg.x0)
    return Experiment(cfg, problem, variant, cost, lr, T, x0, steps_per_epoch, constants)
