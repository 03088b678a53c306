"""
Minimal deterministic MLP trainer with per-layer learning rates.

The desk-scale harness for the diagnose -> schedule -> train loop: at the
start of every epoch the eligible layers' ESD metrics are computed, the
scheduler turns them into per-layer learning rates, and one epoch of plain
mini-batch SGD runs with those rates. Synthetic regression/classification
tasks plus nested subsampling emulate low-data regimes.

Plain SGD (no momentum, no weight decay) keeps the per-layer rate the only
moving part. Everything is a pure function of the seed: two runs with the
same config produce bit-identical histories.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .diagnostics import build_report
from .scheduler import ScheduleConfig, assign_lrs, base_lr
from .spectral import (
    ANALYSIS_MIN_DIM,
    FixedRatio,
    InsufficientSpectrum,
    KPolicy,
    NonFiniteInput,
    WeightMatrix,
    ZeroSpectrum,
    analyze_layers,
)


class DivergenceDetected(RuntimeError):
    """Loss became non-finite; carries the truncated, flagged history."""

    def __init__(self, message: str, history: "RunHistory"):
        super().__init__(message)
        self.history = history


class Activation(Enum):
    TANH = "tanh"
    RELU = "relu"


class Loss(Enum):
    MSE = "mse"
    CROSS_ENTROPY = "cross_entropy"


class DatasetKind(Enum):
    TEACHER_STUDENT = "teacher_student"
    TWO_CLASS_BLOBS = "two_class_blobs"


@dataclass
class Dataset:
    """Inputs (n, d) and targets: (n, o) floats for MSE, (n,) int labels for CE."""

    inputs: np.ndarray
    targets: np.ndarray

    @property
    def n(self) -> int:
        return int(self.inputs.shape[0])


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[WeightMatrix]
    biases: list[np.ndarray]
    activation: Activation


@dataclass
class TrainConfig:
    seed: int
    epochs: int
    batch_size: int
    schedule: ScheduleConfig
    subsample_ratio: float = 1.0
    loss: Loss = Loss.MSE
    k_policy: KPolicy = FixedRatio()
    min_dim: int = ANALYSIS_MIN_DIM

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.subsample_ratio <= 1.0:
            raise ValueError(f"subsample_ratio must lie in (0, 1], got {self.subsample_ratio}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_loss: float
    alpha_std: float | None
    per_layer_lrs: dict[str, float]


@dataclass
class RunHistory:
    per_epoch: list[EpochRecord] = field(default_factory=list)
    diverged: bool = False


def build_mlp(layer_dims: list[int], activation: Activation, seed) -> MlpModel:
    """Seeded MLP with fan-in-scaled uniform init and zero biases.

    Weights use the x @ W convention, shape (fan_in, fan_out). Each layer
    is its own block (block_id = layer name), so per-block and per-layer
    scheduling coincide for plain MLPs.
    """
    if len(layer_dims) < 2:
        raise ValueError("need at least input and output dims")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for i, (fan_in, fan_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
        bound = np.sqrt(6.0 / fan_in)
        name = f"layer_{i}"
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        weights.append(WeightMatrix(name, w, block_id=name))
        biases.append(np.zeros(fan_out))
    return MlpModel(list(layer_dims), weights, biases, activation)


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.TANH:
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_grad(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.TANH:
        t = np.tanh(z)
        return 1.0 - t * t
    return (z > 0.0).astype(np.float64)


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Network output; hidden layers use the activation, the last layer is linear."""
    a = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.values + b
        a = z if i == last else _activate(z, model.activation)
    return a


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def evaluate_loss(model: MlpModel, data: Dataset, loss: Loss) -> float:
    out = forward(model, data.inputs)
    if loss is Loss.MSE:
        return float(np.mean((out - data.targets) ** 2))
    p = _softmax(out)
    picked = p[np.arange(data.n), data.targets.astype(np.int64)]
    return float(-np.mean(np.log(picked + 1e-300)))


def loss_and_grads(
    model: MlpModel, x: np.ndarray, y: np.ndarray, loss: Loss
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Batch loss and analytic gradients for every weight matrix and bias."""
    batch = x.shape[0]
    last = len(model.weights) - 1
    pre: list[np.ndarray] = []
    acts: list[np.ndarray] = [x]
    a = x
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.values + b
        pre.append(z)
        a = z if i == last else _activate(z, model.activation)
        acts.append(a)
    out = acts[-1]

    if loss is Loss.MSE:
        value = float(np.mean((out - y) ** 2))
        delta = 2.0 * (out - y) / out.size
    else:
        labels = y.astype(np.int64)
        p = _softmax(out)
        value = float(-np.mean(np.log(p[np.arange(batch), labels] + 1e-300)))
        delta = p.copy()
        delta[np.arange(batch), labels] -= 1.0
        delta /= batch

    grads_w: list[np.ndarray] = [np.empty(0)] * len(model.weights)
    grads_b: list[np.ndarray] = [np.empty(0)] * len(model.weights)
    for i in range(last, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].values.T) * _activate_grad(pre[i - 1], model.activation)
    return value, grads_w, grads_b


def make_teacher(seed, input_dim: int = 16, hidden: int = 16, output_dim: int = 1) -> MlpModel:
    """The fixed random tanh network that labels TeacherStudent data."""
    return build_mlp([input_dim, hidden, output_dim], Activation.TANH, seed=[int(seed), 0])


def make_dataset(
    kind: DatasetKind,
    n: int,
    seed: int,
    input_dim: int = 16,
    noise: float = 0.05,
) -> Dataset:
    """Deterministic synthetic dataset for the given (kind, n, seed)."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if kind is DatasetKind.TEACHER_STUDENT:
        teacher = make_teacher(seed, input_dim=input_dim)
        x = np.random.default_rng([int(seed), 1]).standard_normal((n, input_dim))
        eps = np.random.default_rng([int(seed), 2]).standard_normal((n, teacher.layer_dims[-1]))
        y = forward(teacher, x) + noise * eps
        return Dataset(x, y)
    if kind is DatasetKind.TWO_CLASS_BLOBS:
        rng = np.random.default_rng([int(seed), 1])
        center = np.full(input_dim, 2.0 / np.sqrt(input_dim))
        n0 = n // 2
        x0 = rng.standard_normal((n0, input_dim)) + center
        x1 = rng.standard_normal((n - n0, input_dim)) - center
        x = np.concatenate([x0, x1])
        y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n - n0, dtype=np.int64)])
        return Dataset(x, y)
    raise ValueError(f"unknown dataset kind {kind}")


def subsample(dataset: Dataset, ratio: float, seed) -> Dataset:
    """Uniform sample without replacement of size max(1, floor(ratio * n)).

    Nested by construction: with the same seed, a smaller ratio's sample is
    a subset of a larger ratio's. At ratio 1.0 the dataset comes back in
    its original order.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    n = dataset.n
    m = max(1, int(ratio * n))
    perm = np.random.default_rng(seed).permutation(n)
    idx = np.sort(perm[:m])
    return Dataset(dataset.inputs[idx], dataset.targets[idx])


def split(dataset: Dataset, n_train: int) -> tuple[Dataset, Dataset]:
    """First n_train examples for training, the rest held out."""
    if not 0 < n_train < dataset.n:
        raise ValueError(f"n_train must lie in (0, {dataset.n}), got {n_train}")
    return (
        Dataset(dataset.inputs[:n_train], dataset.targets[:n_train]),
        Dataset(dataset.inputs[n_train:], dataset.targets[n_train:]),
    )


def train(model: MlpModel, train_data: Dataset, cfg: TrainConfig, test_data: Dataset) -> RunHistory:
    """Run the diagnose -> schedule -> SGD loop for cfg.epochs epochs.

    Per epoch: (1) ESD metrics of eligible layers on the live weights,
    (2) per-layer learning rates from the schedule (every layer gets the
    base rate when balancing is disabled), (3) one epoch of mini-batch SGD,
    (4) record train/test loss, the alpha spread, and the rates used.

    Raises DivergenceDetected (carrying the truncated history) if any loss
    turns non-finite.
    """
    data = subsample(train_data, cfg.subsample_ratio, cfg.seed)
    batch_rng = np.random.default_rng([int(cfg.seed), 3])
    n = data.n
    bs = min(cfg.batch_size, n)
    blocks = {w.name: w.block_id for w in model.weights}
    history = RunHistory()
    step = 0
    for epoch in range(cfg.epochs):
        eta_t = base_lr(cfg.schedule.base_lr_schedule, step=step, epoch=epoch)
        try:
            metrics, skipped_names = analyze_layers(model.weights, cfg.k_policy, cfg.min_dim)
        except NonFiniteInput as exc:
            history.diverged = True
            raise DivergenceDetected(f"non-finite weights at epoch {epoch}", history) from exc
        except (InsufficientSpectrum, ZeroSpectrum):
            # near-singular interim weights carry no usable tail signal;
            # fall back to the base rate for this epoch
            metrics, skipped_names = [], [w.name for w in model.weights]
        assignment = assign_lrs(metrics, blocks, cfg.schedule, eta_t, skipped=skipped_names, step=step)
        alpha_std = build_report(metrics, blocks, cfg.schedule.granularity).alpha_std if metrics else None

        perm = batch_rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            value, grads_w, grads_b = loss_and_grads(model, data.inputs[idx], data.targets[idx], cfg.loss)
            if not np.isfinite(value):
                history.diverged = True
                raise DivergenceDetected(f"non-finite batch loss at epoch {epoch}", history)
            for w, b, gw, gb in zip(model.weights, model.biases, grads_w, grads_b):
                lr = assignment.per_layer[w.name]
                w.values -= lr * gw
                b -= lr * gb
            step += 1

        train_loss = evaluate_loss(model, data, cfg.loss)
        test_loss = evaluate_loss(model, test_data, cfg.loss)
        if not (np.isfinite(train_loss) and np.isfinite(test_loss)):
            history.diverged = True
            raise DivergenceDetected(f"non-finite epoch loss at epoch {epoch}", history)
        history.per_epoch.append(
            EpochRecord(
                epoch=epoch,
                train_loss=train_loss,
                test_loss=test_loss,
                alpha_std=alpha_std,
                per_layer_lrs=dict(assignment.per_layer),
            )
        )
    return history


def history_to_dict(history: RunHistory) -> dict:
    return {
        "diverged": history.diverged,
        "per_epoch": [
            {
                "epoch": r.epoch,
                "train_loss": r.train_loss,
                "test_loss": r.test_loss,
                "alpha_std": r.alpha_std,
                "per_layer_lrs": dict(r.per_layer_lrs),
            }
            for r in history.per_epoch
        ],
    }


def history_to_json(history: RunHistory) -> str:
    return json.dumps(history_to_dict(history), indent=2, sort_keys=True) + "\n"


def history_to_csv(history: RunHistory) -> str:
    """Flat CSV: epoch, losses, alpha spread, then one lr column per layer."""
    layer_names = sorted({name for r in history.per_epoch for name in r.per_layer_lrs})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "test_loss", "alpha_std"] + [f"lr_{n}" for n in layer_names])
    for r in history.per_epoch:
        row = [
            r.epoch,
            repr(r.train_loss),
            repr(r.test_loss),
            "" if r.alpha_std is None else repr(r.alpha_std),
        ]
        row += [repr(r.per_layer_lrs[n]) if n in r.per_layer_lrs else "" for n in layer_names]
        writer.writerow(row)
    return buf.getvalue()
