"""
Layer-wise learning-rate assignment from ESD shape metrics.

A base schedule produces the global learning rate eta_t for a step/epoch;
the balancing functions then spread eta_t across layers according to how
far each layer's shape metric sits from the mean. The sigmoid map uses

    phi = s * (1 / (1 + exp(-tau * (alpha_i - alpha_mean))) - 0.5)
    lr_i = eta_t * 10^phi

so a layer at the mean keeps eta_t exactly and the assignment is confined
to (eta_t * 10^(-s_below/2), eta_t * 10^(s_above/2)). The linear map
min-max normalizes the metrics onto [eta_t*(1-s), eta_t*(1+s)].

For Transformer-like models, metrics can be aggregated per block: each
block's metric is the mean over its layers and every layer in the block
receives the block's learning rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence, Union

from .spectral import EsdMetrics


class InvalidStep(ValueError):
    """Step index is outside the schedule's valid range."""


class MissingBlockId(LookupError):
    """Per-block scheduling requested but a layer has no block label."""


@dataclass(frozen=True)
class Constant:
    """Flat base schedule: eta_t = eta0 at every step."""

    eta0: float

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError(f"eta0 must be > 0, got {self.eta0}")


@dataclass(frozen=True)
class LinearWarmupDecay:
    """Linear warmup to eta0 over ceil(warmup_ratio*total_steps) steps, then
    linear decay to zero at total_steps."""

    eta0: float
    warmup_ratio: float
    total_steps: int

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError(f"eta0 must be > 0, got {self.eta0}")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ValueError(f"warmup_ratio must lie in [0, 1), got {self.warmup_ratio}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")

    @property
    def warmup_steps(self) -> int:
        return math.ceil(self.warmup_ratio * self.total_steps)


@dataclass(frozen=True)
class StepDecay:
    """Multiply eta0 by gamma every period_epochs epochs."""

    eta0: float
    gamma: float = 0.5
    period_epochs: int = 100

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError(f"eta0 must be > 0, got {self.eta0}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.period_epochs < 1:
            raise ValueError(f"period_epochs must be >= 1, got {self.period_epochs}")


BaseSchedule = Union[Constant, LinearWarmupDecay, StepDecay]


def base_lr(schedule: BaseSchedule, step: int = 0, epoch: int = 0) -> float:
    """Base learning rate eta_t at a given optimizer step and epoch."""
    if step < 0 or epoch < 0:
        raise InvalidStep(f"step and epoch must be >= 0, got step={step} epoch={epoch}")
    if isinstance(schedule, Constant):
        return schedule.eta0
    if isinstance(schedule, StepDecay):
        return schedule.eta0 * schedule.gamma ** (epoch // schedule.period_epochs)
    if isinstance(schedule, LinearWarmupDecay):
        if step > schedule.total_steps:
            raise InvalidStep(f"step {step} exceeds total_steps {schedule.total_steps}")
        warmup = schedule.warmup_steps
        if step < warmup:
            return schedule.eta0 * step / warmup
        remaining = schedule.total_steps - warmup
        if remaining <= 0:
            return 0.0
        return schedule.eta0 * (schedule.total_steps - step) / remaining
    raise TypeError(f"unknown schedule type {type(schedule).__name__}")


class ScheduleFunction(Enum):
    SIGMOID = "sigmoid"
    LINEAR_MAP = "linear_map"


class Metric(Enum):
    ALPHA_HILL = "alpha_hill"
    SPECTRAL_NORM = "spectral_norm"
    STABLE_RANK = "stable_rank"


class MetricDirection(Enum):
    HIGHER_MEANS_UNDERTRAINED = "higher_means_undertrained"
    LOWER_MEANS_UNDERTRAINED = "lower_means_undertrained"


class Granularity(Enum):
    PER_LAYER = "per_layer"
    PER_BLOCK = "per_block"


def default_direction(metric: Metric) -> MetricDirection:
    """Heuristic sign convention per metric.

    A higher Hill alpha or stable rank is read as an undertrained layer
    (gets boosted); a higher spectral norm as an overtrained one (gets
    damped). Only the alpha convention is fixed by theory; the others are
    configurable defaults.
    """
    if metric is Metric.SPECTRAL_NORM:
        return MetricDirection.LOWER_MEANS_UNDERTRAINED
    return MetricDirection.HIGHER_MEANS_UNDERTRAINED


@dataclass(frozen=True)
class ScheduleConfig:
    """Parameters of the layer-wise balancing scheduler.

    ``function=None`` disables balancing entirely: every layer receives the
    base learning rate (the baseline arm of comparisons). ``s_above``
    scales adjustments on the undertrained side of the mean, ``s_below``
    on the overtrained side; the linear map uses the single scale
    ``s_above`` and requires it to be < 1.
    """

    base_lr_schedule: BaseSchedule
    function: ScheduleFunction | None = ScheduleFunction.SIGMOID
    metric: Metric = Metric.ALPHA_HILL
    s_above: float = 1.0
    s_below: float = 1.0
    tau: float = 10.0
    granularity: Granularity = Granularity.PER_BLOCK
    metric_direction: MetricDirection = MetricDirection.HIGHER_MEANS_UNDERTRAINED

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.s_above < 0 or self.s_below < 0:
            raise ValueError(f"s_above and s_below must be >= 0, got {self.s_above}, {self.s_below}")
        if (
            self.metric is Metric.ALPHA_HILL
            and self.metric_direction is not MetricDirection.HIGHER_MEANS_UNDERTRAINED
        ):
            raise ValueError("alpha_hill direction is fixed: higher alpha means undertrained")
        if self.function is ScheduleFunction.LINEAR_MAP and not 0.0 <= self.s_above < 1.0:
            raise ValueError(f"linear map requires s in [0, 1), got {self.s_above}")


@dataclass
class LrAssignment:
    """Per-layer learning rates produced for one scheduling step."""

    per_layer: dict[str, float]
    step: int
    base_lr: float

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "base_lr": self.base_lr,
            "per_layer": dict(self.per_layer),
        }


def _stable_sigmoid(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def tb_sigmoid_lr(alpha_i: float, alpha_mean: float, eta_t: float, cfg: ScheduleConfig) -> float:
    """Sigmoid-balanced learning rate for one layer.

    The metric's deviation from the mean is squashed through a sigmoid,
    scaled by s_above (deviation on the undertrained side) or s_below, and
    applied as a power of ten on top of eta_t. A layer exactly at the mean
    receives eta_t unchanged.
    """
    if eta_t <= 0:
        raise ValueError(f"eta_t must be > 0, got {eta_t}")
    delta = alpha_i - alpha_mean
    if cfg.metric_direction is MetricDirection.LOWER_MEANS_UNDERTRAINED:
        delta = -delta
    s = cfg.s_above if delta >= 0 else cfg.s_below
    phi = s * (_stable_sigmoid(cfg.tau * delta) - 0.5)
    return eta_t * 10.0 ** phi


def tb_linear_map_lr(alphas: Mapping[str, float], eta_t: float, s: float) -> dict[str, float]:
    """Min-max map of metrics onto learning rates in [eta_t*(1-s), eta_t*(1+s)].

    With all metrics equal (or s = 0) every layer receives eta_t.
    """
    if not alphas:
        raise ValueError("need at least one layer")
    if eta_t <= 0:
        raise ValueError(f"eta_t must be > 0, got {eta_t}")
    if not 0.0 <= s < 1.0:
        raise ValueError(f"s must lie in [0, 1), got {s}")
    lo = min(alphas.values())
    hi = max(alphas.values())
    if hi == lo or s == 0.0:
        return {name: eta_t for name in alphas}
    span = hi - lo
    return {
        name: eta_t * ((1.0 - s) + 2.0 * s * (a - lo) / span)
        for name, a in alphas.items()
    }


def _metric_value(m: EsdMetrics, metric: Metric) -> float | None:
    if metric is Metric.ALPHA_HILL:
        return m.alpha_hill
    if metric is Metric.SPECTRAL_NORM:
        return m.spectral_norm
    return m.stable_rank


def assign_lrs(
    metrics: Sequence[EsdMetrics],
    blocks: Mapping[str, str | None],
    cfg: ScheduleConfig,
    eta_t: float,
    skipped: Iterable[str] = (),
    step: int = 0,
) -> LrAssignment:
    """Learning rates for every layer of a model at one scheduling step.

    Per-layer granularity feeds each layer's metric to the configured
    function with the mean taken over all analyzed layers; per-block
    granularity averages metrics within each block, schedules the block
    means, and gives every layer of a block the block's rate. Layers named
    in ``skipped`` (too small for analysis) and layers with an undefined
    metric receive eta_t unchanged.

    Raises MissingBlockId when per-block granularity is requested and an
    analyzed layer has no block label.
    """
    if not metrics and not skipped:
        raise ValueError("no layers to schedule")
    if eta_t <= 0:
        raise ValueError(f"eta_t must be > 0, got {eta_t}")

    values: dict[str, float] = {}
    undefined: list[str] = []
    for m in metrics:
        v = _metric_value(m, cfg.metric)
        if v is None:
            undefined.append(m.layer_name)
        else:
            values[m.layer_name] = float(v)

    per_layer: dict[str, float] = {}
    if cfg.function is None or not values:
        per_layer = {name: eta_t for name in values}
    elif cfg.granularity is Granularity.PER_BLOCK:
        block_of: dict[str, str] = {}
        for name in values:
            block = blocks.get(name)
            if not block:
                raise MissingBlockId(f"layer {name!r} has no block label")
            block_of[name] = block
        sums: dict[str, list[float]] = {}
        for name, v in values.items():
            sums.setdefault(block_of[name], []).append(v)
        block_means = {b: sum(vs) / len(vs) for b, vs in sums.items()}
        block_lrs = _schedule_groups(block_means, cfg, eta_t)
        per_layer = {name: block_lrs[block_of[name]] for name in values}
    else:
        per_layer = _schedule_groups(values, cfg, eta_t)

    for name in undefined:
        per_layer[name] = eta_t
    for name in skipped:
        per_layer[name] = eta_t
    return LrAssignment(per_layer=per_layer, step=step, base_lr=eta_t)


def _schedule_groups(values: Mapping[str, float], cfg: ScheduleConfig, eta_t: float) -> dict[str, float]:
    """Apply the configured balancing function to a metric-per-group map."""
    if cfg.function is ScheduleFunction.LINEAR_MAP:
        if cfg.metric_direction is MetricDirection.LOWER_MEANS_UNDERTRAINED:
            values = {name: -v for name, v in values.items()}
        return tb_linear_map_lr(values, eta_t, cfg.s_above)
    mean = sum(values.values()) / len(values)
    return {name: tb_sigmoid_lr(v, mean, eta_t, cfg) for name, v in values.items()}
