#!/usr/bin/env python3
"""
Base learning-rate schedules and the layer-balancing maps on top of them.

Left: the three base schedules (constant, linear warmup/decay, step decay).
Right: how a layer's deviation from the mean alpha turns into a
multiplicative learning-rate factor, for the sigmoid map at a few scales s
and for the min-max linear map.
"""

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from specbalance import (
    Constant,
    LinearWarmupDecay,
    ScheduleConfig,
    StepDecay,
    base_lr,
    tb_linear_map_lr,
    tb_sigmoid_lr,
)

OUT = __import__("pathlib").Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

fig, axes = plt.subplots(1, 2, figsize=(11, 4))

# --- base schedules -----------------------------------------------------------
steps = np.arange(0, 1001)
warmup = LinearWarmupDecay(1e-3, warmup_ratio=0.06, total_steps=1000)
axes[0].plot(steps, [base_lr(warmup, step=s) for s in steps], label="linear warmup+decay")
axes[0].plot(steps, [base_lr(Constant(1e-3), step=s) for s in steps], label="constant")
step_decay = StepDecay(1e-3, gamma=0.5, period_epochs=100)
epochs = steps // 2  # pretend 2 steps per epoch
axes[0].plot(steps, [base_lr(step_decay, step=s, epoch=e) for s, e in zip(steps, epochs)],
             label="step decay (gamma=0.5/100 epochs)")
axes[0].set_xlabel("step")
axes[0].set_ylabel("base lr $\\eta_t$")
axes[0].legend(fontsize=8)
axes[0].set_title("base schedules")

# --- balancing maps -----------------------------------------------------------
deltas = np.linspace(-1.0, 1.0, 201)
for s in (0.5, 1.0, 2.0):
    cfg = ScheduleConfig(Constant(1e-3), s_above=s, s_below=s, tau=10.0)
    factors = [tb_sigmoid_lr(d, 0.0, 1.0, cfg) for d in deltas]
    axes[1].plot(deltas, factors, label=f"sigmoid, s={s}")

alphas = {f"l{i}": a for i, a in enumerate(np.linspace(2.0, 4.0, 9))}
linear = tb_linear_map_lr(alphas, 1.0, s=0.5)
axes[1].plot(np.linspace(-1, 1, 9), list(linear.values()), "ko--", ms=4, label="linear map, s=0.5")

axes[1].axhline(1.0, color="gray", lw=0.5)
axes[1].set_xlabel("deviation $\\alpha_i - \\bar\\alpha$ (linear map: normalized rank)")
axes[1].set_ylabel("lr multiplier")
axes[1].legend(fontsize=8)
axes[1].set_title("balancing maps (tau=10)")

fig.tight_layout()
fig.savefig(OUT / "schedules.png", dpi=120)
print(f"wrote {OUT / 'schedules.png'}")

# the defining identities, printed for the skeptical reader
cfg = ScheduleConfig(Constant(1e-3), s_above=1.0, s_below=1.0, tau=10.0)
print("layer at the mean keeps eta exactly:", tb_sigmoid_lr(3.0, 3.0, 1e-3, cfg) == 1e-3)
up, down = tb_sigmoid_lr(3.5, 3.0, 1e-3, cfg), tb_sigmoid_lr(2.5, 3.0, 1e-3, cfg)
print(f"antisymmetry: lr(+d)*lr(-d) = {up * down:.3e} == eta^2 = {1e-6:.3e}")
print(f"bounds: all factors within 10^(+-s/2) = [{10**-0.5:.3f}, {10**0.5:.3f}]")
