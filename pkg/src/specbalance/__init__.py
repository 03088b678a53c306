"""Heavy-tailed spectral diagnostics and balanced layer-wise learning rates.

The package turns a checkpoint's weight matrices into empirical spectral
densities, summarizes each layer's tail with a Hill power-law exponent,
and maps the per-layer (or per-block) exponents into a balanced
learning-rate assignment. A small deterministic MLP trainer demonstrates
the full diagnose -> schedule -> train loop in low-data regimes.
"""

from .diagnostics import (
    DuplicateLabel,
    EmptyInput,
    ModelReport,
    TrendReport,
    build_report,
    build_trend,
    report_from_json,
    report_to_csv,
    report_to_json,
    trend_to_csv,
)
from .ingestion import (
    CheckpointManifest,
    LayerEntry,
    LayerKind,
    ManifestError,
    OrphanAdapter,
    ShapeMismatch,
    block_map,
    load_checkpoint,
    merge_lora,
    read_manifest,
    write_checkpoint,
)
from .scheduler import (
    BaseSchedule,
    Constant,
    Granularity,
    InvalidStep,
    LinearWarmupDecay,
    LrAssignment,
    Metric,
    MetricDirection,
    MissingBlockId,
    ScheduleConfig,
    ScheduleFunction,
    StepDecay,
    assign_lrs,
    base_lr,
    default_direction,
    tb_linear_map_lr,
    tb_sigmoid_lr,
)
from .spectral import (
    ANALYSIS_MIN_DIM,
    Absolute,
    DegenerateTail,
    EsdMetrics,
    FixedRatio,
    InsufficientSpectrum,
    KPolicy,
    LayerSpectrum,
    NonFiniteInput,
    WeightMatrix,
    ZeroSpectrum,
    analyze_layers,
    compute_spectrum,
    gram_spectrum,
    hill_alpha,
    is_analyzable,
    shape_metrics,
)
from .toytrain import (
    Activation,
    Dataset,
    DatasetKind,
    DivergenceDetected,
    Loss,
    MlpModel,
    RunHistory,
    TrainConfig,
    build_mlp,
    history_to_csv,
    history_to_json,
    make_dataset,
    subsample,
    train,
)

__version__ = "0.1.0"
