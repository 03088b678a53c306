from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

_DTYPES = {"f32": "<f4", "f64": "<f8"}


def write_tensor(path: Path, values: np.ndarray, dtype: str = "f32") -> None:
    np.asarray(values, dtype=np.float64).astype(_DTYPES[dtype]).tofile(path)


def layer_entry(name, rows, cols, file, kind="dense", dtype="f32", block_id=None, pair_id=None):
    entry = {"name": name, "kind": kind, "rows": rows, "cols": cols, "dtype": dtype, "file": file}
    if block_id is not None:
        entry["block_id"] = block_id
    if pair_id is not None:
        entry["pair_id"] = pair_id
    return entry


def write_manifest(directory: Path, layers: list[dict], version: int = 1) -> Path:
    path = directory / "manifest.json"
    path.write_text(json.dumps({"version": version, "layers": layers}, indent=2) + "\n")
    return path


@pytest.fixture
def checkpoint_builder(tmp_path):
    """Build a checkpoint container from (entry, values) pairs in a temp dir."""

    def build(layers: list[tuple[dict, np.ndarray]], subdir: str = "ckpt", version: int = 1) -> Path:
        directory = tmp_path / subdir
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for entry, values in layers:
            write_tensor(directory / entry["file"], values, entry["dtype"])
            entries.append(entry)
        return write_manifest(directory, entries, version)

    return build


def random_dense_checkpoint(directory: Path, n_layers: int = 6, dim: int = 24, seed: int = 0) -> Path:
    """A checkpoint of seeded Gaussian square layers with block labels."""
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n_layers):
        name = f"dense_{i}"
        fname = f"{name}.bin"
        write_tensor(directory / fname, rng.standard_normal((dim, dim)), "f32")
        entries.append(layer_entry(name, dim, dim, fname, block_id=f"block_{i // 2}"))
    return write_manifest(directory, entries)
