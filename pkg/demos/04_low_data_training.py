#!/usr/bin/env python3
"""
The diagnose -> schedule -> train loop in a low-data regime.

Trains the same small MLP on shrinking fractions of a teacher-student
regression task, with and without layer-balanced learning rates, and plots
two things the full-scale story predicts:

  1. the spread (STD) of the per-layer tail exponents grows as the
     training set shrinks, and
  2. balancing the rates pulls that spread down.

At this scale the test-loss improvement is noisy; the spread behavior is
the robust signal. A larger version of this sweep is available as
`specbalance train-demo`.
"""

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from specbalance import (
    Activation,
    Constant,
    DatasetKind,
    Granularity,
    ScheduleConfig,
    ScheduleFunction,
    TrainConfig,
    build_mlp,
    make_dataset,
    train,
)
from specbalance.toytrain import split

OUT = __import__("pathlib").Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

RATIOS = [1.0, 0.3, 0.1, 0.03]
SEEDS = [1, 2, 3]
EPOCHS = 150

pool = make_dataset(DatasetKind.TEACHER_STUDENT, 1024 + 256, seed=0)
train_pool, test_data = split(pool, 1024)

results = {arm: {r: {"loss": [], "std": []} for r in RATIOS} for arm in ("baseline", "balanced")}
for ratio in RATIOS:
    for seed in SEEDS:
        for arm, function in (("baseline", None), ("balanced", ScheduleFunction.SIGMOID)):
            cfg = TrainConfig(
                seed=seed,
                epochs=EPOCHS,
                batch_size=32,
                schedule=ScheduleConfig(
                    Constant(0.05), function=function, granularity=Granularity.PER_BLOCK
                ),
                subsample_ratio=ratio,
            )
            model = build_mlp([16, 32, 32, 1], Activation.TANH, seed=[seed, 100])
            history = train(model, train_pool, cfg, test_data)
            last = history.per_epoch[-1]
            results[arm][ratio]["loss"].append(last.test_loss)
            results[arm][ratio]["std"].append(last.alpha_std)
    print(f"ratio {ratio:5.2f}: "
          f"baseline loss {np.mean(results['baseline'][ratio]['loss']):.3f}, "
          f"balanced loss {np.mean(results['balanced'][ratio]['loss']):.3f}, "
          f"baseline alpha-STD {np.mean(results['baseline'][ratio]['std']):.3f}, "
          f"balanced alpha-STD {np.mean(results['balanced'][ratio]['std']):.3f}")

fig, axes = plt.subplots(1, 2, figsize=(11, 4))
x = np.arange(len(RATIOS))
for arm, color in (("baseline", "tab:gray"), ("balanced", "tab:blue")):
    losses = [np.mean(results[arm][r]["loss"]) for r in RATIOS]
    stds = [np.mean(results[arm][r]["std"]) for r in RATIOS]
    axes[0].plot(x, losses, "o-", color=color, label=arm)
    axes[1].plot(x, stds, "o-", color=color, label=arm)
for ax, title in zip(axes, ("final test loss", "STD of per-layer alpha")):
    ax.set_xticks(x, [f"{r:g}" for r in RATIOS])
    ax.set_xlabel("training-data ratio")
    ax.set_title(title)
    ax.legend()
fig.tight_layout()
fig.savefig(OUT / "low_data_sweep.png", dpi=120)
print(f"wrote {OUT / 'low_data_sweep.png'}")
