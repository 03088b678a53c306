"""
Checkpoint container: a JSON manifest plus one raw tensor file per layer.

Tensor files are headerless little-endian row-major float32/float64; the
manifest records names, shapes, dtypes and optional block/LoRA grouping.
The format is deliberately framework-free so any exporter can produce it
and byte-level round-trips are testable.

Low-rank adapter triples (base W, B of shape d x r, A of shape r x k,
sharing a pair_id) are merged on load into the effective weight
W' = W + B @ A, which is the matrix whose ESD is analyzed; the ESD of
B @ A alone is meaningless because the adapters are low-rank by
construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .spectral import WeightMatrix

MANIFEST_VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class ManifestError(ValueError):
    """Manifest violates the container schema or its content constraints."""


class ShapeMismatch(ManifestError):
    """Declared shape disagrees with file size or adapter dimensions."""


class OrphanAdapter(ManifestError):
    """A LoRA adapter without its partner or base weight."""


class LayerKind(Enum):
    DENSE = "dense"
    LORA_BASE = "lora_base"
    LORA_A = "lora_a"
    LORA_B = "lora_b"


@dataclass
class LayerEntry:
    name: str
    kind: LayerKind
    rows: int
    cols: int
    dtype: str
    file: str
    block_id: str | None = None
    pair_id: str | None = None


@dataclass
class CheckpointManifest:
    version: int
    layers: list[LayerEntry]


def _schema() -> dict:
    text = resources.files("specbalance").joinpath("manifest.schema.json").read_text()
    return json.loads(text)


def read_manifest(manifest_path: str | Path) -> CheckpointManifest:
    """Parse and validate a manifest file (structure only, no tensor reads)."""
    path = Path(manifest_path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as exc:
        raise ManifestError(f"manifest {path}: {exc.message}") from exc

    layers = [
        LayerEntry(
            name=entry["name"],
            kind=LayerKind(entry["kind"]),
            rows=entry["rows"],
            cols=entry["cols"],
            dtype=entry["dtype"],
            file=entry["file"],
            block_id=entry.get("block_id"),
            pair_id=entry.get("pair_id"),
        )
        for entry in raw["layers"]
    ]
    names = [e.name for e in layers]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ManifestError(f"duplicate layer names in manifest: {dupes}")
    for entry in layers:
        if entry.kind is not LayerKind.DENSE and not entry.pair_id:
            raise ManifestError(f"layer {entry.name!r}: LoRA kinds require a pair_id")
    return CheckpointManifest(version=raw["version"], layers=layers)


def _read_tensor(entry: LayerEntry, base_dir: Path) -> np.ndarray:
    path = base_dir / entry.file
    dtype = _DTYPES[entry.dtype]
    expected = entry.rows * entry.cols * dtype.itemsize
    try:
        actual = path.stat().st_size
    except OSError as exc:
        raise ManifestError(f"layer {entry.name!r}: missing tensor file {path}") from exc
    if actual != expected:
        raise ShapeMismatch(
            f"layer {entry.name!r}: file {path} has {actual} bytes, "
            f"expected {expected} for {entry.rows}x{entry.cols} {entry.dtype}"
        )
    values = np.fromfile(path, dtype=dtype).astype(np.float64).reshape(entry.rows, entry.cols)
    if not np.isfinite(values).all():
        raise ManifestError(f"layer {entry.name!r}: non-finite values in {path}")
    return values


def _pair_adapters(manifest: CheckpointManifest) -> dict[str, dict[LayerKind, LayerEntry]]:
    """Group LoRA entries by pair_id, demanding complete (base, A, B) triples."""
    triples: dict[str, dict[LayerKind, LayerEntry]] = {}
    for entry in manifest.layers:
        if entry.kind is LayerKind.DENSE:
            continue
        group = triples.setdefault(entry.pair_id, {})
        if entry.kind in group:
            raise OrphanAdapter(
                f"pair {entry.pair_id!r}: duplicate {entry.kind.value} entry {entry.name!r}"
            )
        group[entry.kind] = entry
    for pair_id, group in triples.items():
        missing = {LayerKind.LORA_BASE, LayerKind.LORA_A, LayerKind.LORA_B} - set(group)
        if missing:
            raise OrphanAdapter(
                f"pair {pair_id!r}: incomplete LoRA triple, missing {sorted(k.value for k in missing)}"
            )
        base, a, b = group[LayerKind.LORA_BASE], group[LayerKind.LORA_A], group[LayerKind.LORA_B]
        r = b.cols
        if a.rows != r:
            raise ShapeMismatch(
                f"pair {pair_id!r}: rank mismatch, B is {b.rows}x{b.cols} but A is {a.rows}x{a.cols}"
            )
        if b.rows != base.rows or a.cols != base.cols:
            raise ShapeMismatch(
                f"pair {pair_id!r}: adapters B ({b.rows}x{b.cols}) @ A ({a.rows}x{a.cols}) "
                f"do not conform to base {base.rows}x{base.cols}"
            )
        if r > min(base.rows, base.cols):
            raise ShapeMismatch(
                f"pair {pair_id!r}: adapter rank {r} exceeds min(base dims) {min(base.rows, base.cols)}"
            )
    return triples


def merge_lora(base: WeightMatrix, b: np.ndarray, a: np.ndarray) -> WeightMatrix:
    """Effective weight W' = W + B @ A of a LoRA-augmented layer."""
    b = np.asarray(b, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if b.ndim != 2 or a.ndim != 2:
        raise ShapeMismatch("adapters must be 2-D matrices")
    d, k = base.rows, base.cols
    if b.shape[0] != d or a.shape[1] != k or b.shape[1] != a.shape[0]:
        raise ShapeMismatch(
            f"layer {base.name!r}: B {b.shape} @ A {a.shape} does not conform to base {(d, k)}"
        )
    if b.shape[1] > min(d, k):
        raise ShapeMismatch(f"layer {base.name!r}: adapter rank {b.shape[1]} exceeds min(base dims)")
    return WeightMatrix(base.name, base.values + b @ a, block_id=base.block_id, dtype=base.dtype)


def load_checkpoint(manifest_path: str | Path) -> list[WeightMatrix]:
    """Load a checkpoint container into weight matrices.

    Dense layers are returned as-is; LoRA triples are merged into one
    matrix named after the base layer. Order follows the manifest (a merged
    matrix appears at its base entry's position).
    """
    path = Path(manifest_path)
    manifest = read_manifest(path)
    base_dir = path.parent
    triples = _pair_adapters(manifest)

    tensors = {entry.name: _read_tensor(entry, base_dir) for entry in manifest.layers}
    matrices: list[WeightMatrix] = []
    for entry in manifest.layers:
        if entry.kind is LayerKind.DENSE:
            matrices.append(
                WeightMatrix(entry.name, tensors[entry.name], block_id=entry.block_id, dtype=entry.dtype)
            )
        elif entry.kind is LayerKind.LORA_BASE:
            group = triples[entry.pair_id]
            base = WeightMatrix(entry.name, tensors[entry.name], block_id=entry.block_id, dtype=entry.dtype)
            matrices.append(
                merge_lora(base, tensors[group[LayerKind.LORA_B].name], tensors[group[LayerKind.LORA_A].name])
            )
    return matrices


def _safe_filename(name: str, index: int) -> str:
    safe = "".join(c if c.isalnum() or c in "._-" else "_" for c in name)
    return f"{index:03d}_{safe}.bin"


def write_checkpoint(
    matrices: list[WeightMatrix],
    out_dir: str | Path,
    force_dtype: str | None = None,
) -> Path:
    """Write matrices as a dense-only container; returns the manifest path.

    Each matrix is stored with its own ``dtype`` unless ``force_dtype``
    overrides it (the explicit downcast switch). Loading an f32 container
    and writing it back reproduces the tensor files bit-identically.
    """
    if force_dtype is not None and force_dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {force_dtype!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, w in enumerate(matrices):
        dtype = force_dtype or w.dtype
        fname = _safe_filename(w.name, i)
        w.values.astype(_DTYPES[dtype]).tofile(out / fname)
        entry = {
            "name": w.name,
            "kind": LayerKind.DENSE.value,
            "rows": w.rows,
            "cols": w.cols,
            "dtype": dtype,
            "file": fname,
        }
        if w.block_id is not None:
            entry["block_id"] = w.block_id
        entries.append(entry)
    manifest_path = out / "manifest.json"
    payload = {"version": MANIFEST_VERSION, "layers": entries}
    manifest_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return manifest_path


def block_map(manifest: CheckpointManifest) -> dict[str, str | None]:
    """Layer-name -> block-id map over the matrices load_checkpoint returns."""
    return {
        entry.name: entry.block_id
        for entry in manifest.layers
        if entry.kind in (LayerKind.DENSE, LayerKind.LORA_BASE)
    }
