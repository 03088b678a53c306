"""
Command-line entry points.

    specbalance analyze     ESD metrics + aggregate report for a checkpoint
    specbalance schedule    per-layer learning rates for a checkpoint
    specbalance train-demo  baseline-vs-balanced MLP sweep over data ratios
    specbalance report      trend CSV from saved analyze reports

Exit codes: 0 success, 2 invalid input (flags, manifest, report files),
3 spectral-analysis failure (the message names the layer), 4 missing block
label under per-block granularity. Given identical inputs and flags every
command writes byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, toytrain
from .ingestion import ManifestError, block_map, load_checkpoint, read_manifest
from .scheduler import (
    Constant,
    Granularity,
    Metric,
    MetricDirection,
    MissingBlockId,
    ScheduleConfig,
    ScheduleFunction,
    assign_lrs,
    default_direction,
)
from .spectral import (
    Absolute,
    DegenerateTail,
    FixedRatio,
    InsufficientSpectrum,
    NonFiniteInput,
    ZeroSpectrum,
    analyze_layers,
)

_GRANULARITY = {"per-layer": Granularity.PER_LAYER, "per-block": Granularity.PER_BLOCK}
_METRIC = {
    "alpha-hill": Metric.ALPHA_HILL,
    "spectral-norm": Metric.SPECTRAL_NORM,
    "stable-rank": Metric.STABLE_RANK,
}
_FUNCTION = {"sigmoid": ScheduleFunction.SIGMOID, "linear-map": ScheduleFunction.LINEAR_MAP}
_DIRECTION = {
    "higher-undertrained": MetricDirection.HIGHER_MEANS_UNDERTRAINED,
    "lower-undertrained": MetricDirection.LOWER_MEANS_UNDERTRAINED,
}


def _k_policy(args) -> FixedRatio | Absolute:
    if getattr(args, "k", None) is not None:
        return Absolute(args.k)
    return FixedRatio(args.k_ratio)


def _write(path: str | Path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def _add_spectral_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--k-ratio", type=float, default=0.5, help="tail fraction for the Hill fit (default 0.5)")
    group.add_argument("--k", type=int, default=None, help="absolute tail size for the Hill fit")
    p.add_argument(
        "--granularity",
        choices=sorted(_GRANULARITY),
        default="per-block",
        help="aggregate metrics per layer or per block (default per-block)",
    )


def cmd_analyze(args) -> int:
    matrices = load_checkpoint(args.manifest)
    blocks = block_map(read_manifest(args.manifest))
    metrics, _ = analyze_layers(matrices, _k_policy(args))
    report = diagnostics.build_report(
        metrics,
        blocks,
        _GRANULARITY[args.granularity],
        checkpoint_id=str(args.manifest),
    )
    _write(args.output, diagnostics.report_to_json(report))
    if args.csv:
        _write(args.csv, diagnostics.report_to_csv(report))
    return 0


def cmd_schedule(args) -> int:
    if args.base_lr <= 0:
        print("error: --base-lr must be > 0", file=sys.stderr)
        return 2
    metric = _METRIC[args.metric]
    direction = default_direction(metric) if args.metric_direction == "auto" else _DIRECTION[args.metric_direction]
    cfg = ScheduleConfig(
        base_lr_schedule=Constant(args.base_lr),
        function=_FUNCTION[args.function],
        metric=metric,
        s_above=args.s_above,
        s_below=args.s_below,
        tau=args.tau,
        granularity=_GRANULARITY[args.granularity],
        metric_direction=direction,
    )
    matrices = load_checkpoint(args.manifest)
    blocks = block_map(read_manifest(args.manifest))
    metrics, skipped = analyze_layers(matrices, _k_policy(args))
    assignment = assign_lrs(metrics, blocks, cfg, eta_t=args.base_lr, skipped=skipped, step=0)
    _write(args.output, json.dumps(assignment.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def _demo_schedule(args, function: ScheduleFunction | None) -> ScheduleConfig:
    return ScheduleConfig(
        base_lr_schedule=Constant(args.base_lr),
        function=function,
        s_above=args.s_above,
        s_below=args.s_below,
        tau=args.tau,
        granularity=_GRANULARITY[args.granularity],
    )


def cmd_train_demo(args) -> int:
    if not args.ratios or not args.seeds:
        print("error: need at least one ratio and one seed", file=sys.stderr)
        return 2
    for r in args.ratios:
        if not 0.0 < r <= 1.0:
            print(f"error: ratio {r} outside (0, 1]", file=sys.stderr)
            return 2
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    dims = [int(d) for d in args.dims.split(",")]
    kind = toytrain.DatasetKind(args.dataset.replace("-", "_"))
    loss = toytrain.Loss.CROSS_ENTROPY if kind is toytrain.DatasetKind.TWO_CLASS_BLOBS else toytrain.Loss.MSE
    pool = toytrain.make_dataset(kind, args.train_n + args.test_n, args.data_seed, input_dim=dims[0])
    train_pool, test_data = toytrain.split(pool, args.train_n)

    arms = {"baseline": None, "balanced": ScheduleFunction.SIGMOID}
    final: dict[str, dict[str, dict]] = {}
    trend_rows: list[tuple[str, float, float | None]] = []
    for ratio in args.ratios:
        label = f"{ratio:g}"
        final[label] = {}
        for arm, function in arms.items():
            losses, stds, diverged = [], [], 0
            for seed in args.seeds:
                cfg = toytrain.TrainConfig(
                    seed=seed,
                    epochs=args.epochs,
                    batch_size=args.batch_size,
                    schedule=_demo_schedule(args, function),
                    subsample_ratio=ratio,
                    loss=loss,
                )
                model = toytrain.build_mlp(dims, toytrain.Activation.TANH, seed=[seed, 100])
                try:
                    history = toytrain.train(model, train_pool, cfg, test_data)
                except toytrain.DivergenceDetected as exc:
                    history = exc.history
                    diverged += 1
                    print(f"warning: {arm} ratio={label} seed={seed} diverged: {exc}", file=sys.stderr)
                _write(out / f"history_{arm}_r{label}_s{seed}.json", toytrain.history_to_json(history))
                if history.per_epoch:
                    losses.append(history.per_epoch[-1].test_loss)
                    if history.per_epoch[-1].alpha_std is not None:
                        stds.append(history.per_epoch[-1].alpha_std)
            summary = {
                "n": len(losses),
                "diverged": diverged,
                "final_test_loss_mean": float(np.mean(losses)) if losses else None,
                "final_test_loss_std": float(np.std(losses)) if losses else None,
            }
            final[label][arm] = summary
            trend_rows.append(
                (
                    f"{arm}@{label}",
                    float(np.mean(stds)) if stds else float("nan"),
                    summary["final_test_loss_mean"],
                )
            )
    _write(out / "comparison.json", json.dumps({"ratios": final}, indent=2, sort_keys=True) + "\n")
    _write(out / "trend.csv", diagnostics.trend_to_csv(diagnostics.TrendReport(trend_rows)))
    return 0


def cmd_report(args) -> int:
    if len(args.labels) != len(args.reports):
        print("error: --labels must match --reports in length", file=sys.stderr)
        return 2
    qualities = args.qualities or [None] * len(args.reports)
    if len(qualities) != len(args.reports):
        print("error: --qualities must match --reports in length", file=sys.stderr)
        return 2
    entries = []
    for label, path, quality in zip(args.labels, args.reports, qualities):
        try:
            report = diagnostics.report_from_json(Path(path).read_text())
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            print(f"error: cannot read report {path}: {exc}", file=sys.stderr)
            return 2
        entries.append((label, report, quality))
    trend = diagnostics.build_trend(entries)
    _write(args.output, diagnostics.trend_to_csv(trend))
    if args.json:
        _write(args.json, json.dumps(diagnostics.trend_to_dict(trend), indent=2, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specbalance", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="per-layer ESD metrics and aggregate report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", required=True, help="report JSON path")
    p.add_argument("--csv", default=None, help="optional per-layer CSV path")
    _add_spectral_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("schedule", help="per-layer learning-rate assignment")
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", required=True, help="assignment JSON path")
    p.add_argument("--base-lr", type=float, required=True)
    p.add_argument("--s-above", type=float, default=1.0)
    p.add_argument("--s-below", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=10.0)
    p.add_argument("--metric", choices=sorted(_METRIC), default="alpha-hill")
    p.add_argument("--function", choices=sorted(_FUNCTION), default="sigmoid")
    p.add_argument(
        "--metric-direction",
        choices=["auto"] + sorted(_DIRECTION),
        default="auto",
        help="which side of the mean counts as undertrained (default: per-metric heuristic)",
    )
    _add_spectral_flags(p)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("train-demo", help="baseline vs balanced training sweep")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--ratios", type=float, nargs="+", default=[1.0, 0.1, 0.01])
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--dataset", choices=["teacher-student", "two-class-blobs"], default="teacher-student")
    p.add_argument("--dims", default="16,32,32,1", help="comma-separated MLP layer dims")
    p.add_argument("--train-n", type=int, default=1024, help="training pool size before subsampling")
    p.add_argument("--test-n", type=int, default=256)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--base-lr", type=float, default=0.05)
    p.add_argument("--s-above", type=float, default=1.0)
    p.add_argument("--s-below", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=10.0)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument(
        "--granularity",
        choices=sorted(_GRANULARITY),
        default="per-block",
    )
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("report", help="trend CSV from saved analyze reports")
    p.add_argument("--reports", nargs="+", required=True, help="ModelReport JSON files")
    p.add_argument("--labels", nargs="+", required=True)
    p.add_argument("--qualities", type=float, nargs="+", default=None)
    p.add_argument("--output", required=True, help="trend CSV path")
    p.add_argument("--json", default=None, help="optional trend JSON path")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingBlockId as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (NonFiniteInput, InsufficientSpectrum, DegenerateTail, ZeroSpectrum) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (diagnostics.EmptyInput, diagnostics.DuplicateLabel) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # invalid flag combinations surface as config construction errors
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
