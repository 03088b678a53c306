"""
Model-level aggregation of per-layer ESD metrics.

The headline diagnostic is the spread of the Hill alphas: a large standard
deviation across layers (or across Transformer-style blocks) indicates
unevenly trained layers, which is exactly the regime where layer-wise
learning-rate balancing pays off. Trend reports line up that spread with a
quality metric across checkpoints, e.g. over a sweep of training-set
sizes.

All standard deviations are population STDs (divide by N).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .scheduler import Granularity
from .spectral import EsdMetrics


class EmptyInput(ValueError):
    """No metrics (or too few entries) to aggregate."""


class DuplicateLabel(ValueError):
    """Trend series labels must be unique."""


@dataclass
class ModelReport:
    """Per-layer metrics plus aggregate alpha statistics for one checkpoint.

    ``alpha_mean``/``alpha_std`` are None when no layer has a defined
    alpha. Under per-block granularity the aggregates are computed over
    block means and ``block_summaries`` holds each block's mean alpha.
    """

    checkpoint_id: str
    per_layer: list[EsdMetrics]
    alpha_mean: float | None
    alpha_std: float | None
    granularity: Granularity
    block_summaries: dict[str, float] | None = None


@dataclass
class TrendReport:
    """Labeled series of (alpha_std, quality) points, e.g. one per subsampling ratio."""

    series: list[tuple[str, float, float | None]]

    def __post_init__(self):
        labels = [label for label, _, _ in self.series]
        if len(set(labels)) != len(labels):
            dupes = sorted({l for l in labels if labels.count(l) > 1})
            raise DuplicateLabel(f"duplicate trend labels: {dupes}")


def build_report(
    metrics: Sequence[EsdMetrics],
    blocks: Mapping[str, str | None] | None = None,
    granularity: Granularity = Granularity.PER_LAYER,
    checkpoint_id: str = "",
) -> ModelReport:
    """Aggregate per-layer metrics into a model report.

    Per-block granularity first averages alphas within each block, then
    takes mean/STD over the block means; a layer without a block label
    counts as its own singleton block. Layers with undefined alpha are
    excluded from the aggregates but kept in the per-layer listing.
    """
    if not metrics:
        raise EmptyInput("no layer metrics to aggregate")
    blocks = blocks or {}

    defined = [(m.layer_name, m.alpha_hill) for m in metrics if m.alpha_hill is not None]
    block_summaries = None
    if granularity is Granularity.PER_BLOCK:
        grouped: dict[str, list[float]] = {}
        for name, alpha in defined:
            block = blocks.get(name) or name
            grouped.setdefault(block, []).append(alpha)
        block_summaries = {b: float(np.mean(vs)) for b, vs in grouped.items()}
        pool = list(block_summaries.values())
    else:
        pool = [alpha for _, alpha in defined]

    alpha_mean = float(np.mean(pool)) if pool else None
    alpha_std = float(np.std(pool)) if pool else None
    return ModelReport(
        checkpoint_id=checkpoint_id,
        per_layer=list(metrics),
        alpha_mean=alpha_mean,
        alpha_std=alpha_std,
        granularity=granularity,
        block_summaries=block_summaries,
    )


def build_trend(
    entries: Sequence[tuple[str, ModelReport, float | None]],
) -> TrendReport:
    """Trend series over checkpoints: (label, alpha_std, quality) per entry.

    Labels (e.g. subsampling ratios) must be unique; entry order is
    preserved. Quality is caller-supplied (accuracy-like or error-like;
    the direction is up to the caller).
    """
    if len(entries) < 2:
        raise EmptyInput(f"need at least 2 entries for a trend, got {len(entries)}")
    series = []
    for label, report, quality in entries:
        std = report.alpha_std if report.alpha_std is not None else float("nan")
        series.append((label, float(std), None if quality is None else float(quality)))
    return TrendReport(series=series)


def metrics_to_dict(m: EsdMetrics) -> dict:
    return {
        "layer": m.layer_name,
        "alpha_hill": m.alpha_hill,
        "k_used": m.k_used,
        "spectral_norm": m.spectral_norm,
        "stable_rank": m.stable_rank,
    }


def metrics_from_dict(d: Mapping) -> EsdMetrics:
    return EsdMetrics(
        layer_name=d["layer"],
        alpha_hill=d["alpha_hill"],
        k_used=d["k_used"],
        spectral_norm=d["spectral_norm"],
        stable_rank=d["stable_rank"],
    )


def report_to_dict(report: ModelReport) -> dict:
    return {
        "checkpoint_id": report.checkpoint_id,
        "granularity": report.granularity.value,
        "alpha_mean": report.alpha_mean,
        "alpha_std": report.alpha_std,
        "per_layer": [metrics_to_dict(m) for m in report.per_layer],
        "block_summaries": report.block_summaries,
    }


def report_from_dict(d: Mapping) -> ModelReport:
    return ModelReport(
        checkpoint_id=d["checkpoint_id"],
        per_layer=[metrics_from_dict(m) for m in d["per_layer"]],
        alpha_mean=d["alpha_mean"],
        alpha_std=d["alpha_std"],
        granularity=Granularity(d["granularity"]),
        block_summaries=d.get("block_summaries"),
    )


def report_to_json(report: ModelReport) -> str:
    """Canonical JSON form (sorted keys); round-trips losslessly."""
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> ModelReport:
    return report_from_dict(json.loads(text))


def report_to_csv(report: ModelReport) -> str:
    """Per-layer metrics as CSV with columns layer,alpha_hill,k_used,spectral_norm,stable_rank."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer", "alpha_hill", "k_used", "spectral_norm", "stable_rank"])
    for m in report.per_layer:
        writer.writerow(
            [
                m.layer_name,
                "" if m.alpha_hill is None else repr(m.alpha_hill),
                "" if m.k_used is None else m.k_used,
                repr(m.spectral_norm),
                repr(m.stable_rank),
            ]
        )
    return buf.getvalue()


def trend_to_csv(trend: TrendReport) -> str:
    """Plot-data CSV with columns label,alpha_std,quality."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "alpha_std", "quality"])
    for label, std, quality in trend.series:
        writer.writerow([label, repr(std), "" if quality is None else repr(quality)])
    return buf.getvalue()


def trend_to_dict(trend: TrendReport) -> dict:
    return {
        "series": [
            {"label": label, "alpha_std": std, "quality": quality}
            for label, std, quality in trend.series
        ]
    }
