#!/usr/bin/env python3
"""
End-to-end checkpoint analysis: container -> metrics -> report -> schedule.

Writes a small checkpoint container to disk (three dense layers in two
blocks plus one LoRA-augmented layer), loads it back, prints the per-layer
metrics, and derives a per-block learning-rate assignment. The same flow
is available from the command line:

    specbalance analyze  --manifest <dir>/manifest.json --output report.json
    specbalance schedule --manifest <dir>/manifest.json --output lrs.json --base-lr 1e-3
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from specbalance import (
    Constant,
    Granularity,
    ScheduleConfig,
    analyze_layers,
    assign_lrs,
    block_map,
    build_report,
    load_checkpoint,
    read_manifest,
    report_to_json,
)

rng = np.random.default_rng(1)
workdir = Path(tempfile.mkdtemp(prefix="specbalance_demo_"))

# --- write a container by hand (any exporter can produce this layout) ---------
def dump(name, values, dtype="<f4"):
    np.asarray(values, dtype=np.float64).astype(dtype).tofile(workdir / name)

layers = []
for i in range(3):
    name = f"mlp.{i}.weight"
    values = rng.standard_normal((24, 24)) * (1.0 + 0.5 * i)
    dump(f"{name}.bin", values)
    layers.append(
        {"name": name, "kind": "dense", "rows": 24, "cols": 24, "dtype": "f32",
         "file": f"{name}.bin", "block_id": f"block_{i // 2}"}
    )

# a LoRA triple: base + rank-2 adapters sharing a pair_id
base = rng.standard_normal((24, 24))
b, a = rng.standard_normal((24, 2)) * 0.3, rng.standard_normal((2, 24)) * 0.3
dump("attn.weight.bin", base)
dump("attn.lora_a.bin", a)
dump("attn.lora_b.bin", b)
layers += [
    {"name": "attn.weight", "kind": "lora_base", "rows": 24, "cols": 24, "dtype": "f32",
     "file": "attn.weight.bin", "block_id": "block_1", "pair_id": "attn"},
    {"name": "attn.lora_a", "kind": "lora_a", "rows": 2, "cols": 24, "dtype": "f32",
     "file": "attn.lora_a.bin", "pair_id": "attn"},
    {"name": "attn.lora_b", "kind": "lora_b", "rows": 24, "cols": 2, "dtype": "f32",
     "file": "attn.lora_b.bin", "pair_id": "attn"},
]
manifest_path = workdir / "manifest.json"
manifest_path.write_text(json.dumps({"version": 1, "layers": layers}, indent=2))
print(f"container written to {workdir}")

# --- load, analyze, report ----------------------------------------------------
matrices = load_checkpoint(manifest_path)
print(f"loaded {len(matrices)} matrices (LoRA triple merged into its base)")

metrics, skipped = analyze_layers(matrices)
blocks = block_map(read_manifest(manifest_path))
report = build_report(metrics, blocks, Granularity.PER_BLOCK, checkpoint_id="demo")

print(f"\n{'layer':14s} {'alpha':>7s} {'spec_norm':>10s} {'stable_rank':>12s}")
for m in report.per_layer:
    alpha = f"{m.alpha_hill:.3f}" if m.alpha_hill is not None else "n/a"
    print(f"{m.layer_name:14s} {alpha:>7s} {m.spectral_norm:10.2f} {m.stable_rank:12.2f}")
print(f"\nblock means: { {b: round(v, 3) for b, v in report.block_summaries.items()} }")
print(f"alpha mean {report.alpha_mean:.3f}, alpha STD {report.alpha_std:.3f}")

(workdir / "report.json").write_text(report_to_json(report))

# --- per-block learning rates on top of a constant base schedule ---------------
cfg = ScheduleConfig(Constant(1e-3), s_above=2.0, s_below=1.0, granularity=Granularity.PER_BLOCK)
assignment = assign_lrs(metrics, blocks, cfg, eta_t=1e-3, skipped=skipped)
print("\nper-layer learning rates (blocks move together):")
for name, lr in assignment.per_layer.items():
    print(f"  {name:14s} {lr:.3e}")
