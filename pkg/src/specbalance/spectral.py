"""
Empirical spectral densities (ESDs) of layer weight matrices and the shape
metrics derived from them.

For a weight matrix W the ESD is the set of eigenvalues of the correlation
matrix W^T W (equivalently, the squared singular values of W). The tail of
the ESD is summarized by a power-law exponent fitted with the Hill
estimator on the top-k eigenvalues; a heavier tail (lower exponent) is read
as a better-trained layer. Two auxiliary shape metrics are provided:
the spectral norm (largest eigenvalue of the correlation matrix) and the
stable rank (sum of eigenvalues over the largest one).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

# Layers with min(rows, cols) below this are skipped: their spectra are too
# short for a meaningful tail fit.
ANALYSIS_MIN_DIM = 8

# Eigenvalues <= EIGENVALUE_FLOOR_REL * lambda_max are treated as numerical
# zeros and dropped before tail fitting (rank-deficient layers otherwise
# feed log(0) into the estimator).
EIGENVALUE_FLOOR_REL = 1e-12


class NonFiniteInput(ValueError):
    """Weight matrix contains NaN or Inf entries."""


class InsufficientSpectrum(ValueError):
    """Too few strictly positive eigenvalues for the requested tail size."""


class DegenerateTail(ValueError):
    """All top-k eigenvalues equal the tail threshold; the log-sum is zero."""


class ZeroSpectrum(ValueError):
    """Spectrum is empty or its largest eigenvalue is zero."""


@dataclass
class WeightMatrix:
    """A named 2-D array of layer weights, the unit of spectral analysis.

    ``values`` is held as a float64 row-major array regardless of the
    on-disk storage type; ``dtype`` records the storage type ("f32" or
    "f64") so containers can be rewritten byte-identically.
    """

    name: str
    values: np.ndarray
    block_id: str | None = None
    dtype: str = "f64"

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"weight matrix {self.name!r} must be 2-D, got shape {self.values.shape}")
        if self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError(f"weight matrix {self.name!r} has empty dimension {self.values.shape}")
        if self.dtype not in ("f32", "f64"):
            raise ValueError(f"weight matrix {self.name!r}: unsupported dtype {self.dtype!r}")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass
class LayerSpectrum:
    """Ascending eigenvalues of one layer's correlation matrix W^T W."""

    layer_name: str
    eigenvalues: np.ndarray

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)
        if self.eigenvalues.ndim != 1:
            raise ValueError(f"spectrum of {self.layer_name!r} must be 1-D")
        if self.eigenvalues.size and np.any(np.diff(self.eigenvalues) < 0):
            raise ValueError(f"spectrum of {self.layer_name!r} must be sorted ascending")
        if self.eigenvalues.size and self.eigenvalues[0] < 0:
            raise ValueError(f"spectrum of {self.layer_name!r} has negative eigenvalues")

    @property
    def n(self) -> int:
        return int(self.eigenvalues.size)


@dataclass(frozen=True)
class FixedRatio:
    """Use the top floor(ratio * n_positive) eigenvalues for the tail fit."""

    ratio: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.ratio < 1.0:
            raise ValueError(f"tail ratio must lie in (0, 1), got {self.ratio}")


@dataclass(frozen=True)
class Absolute:
    """Use exactly k top eigenvalues for the tail fit."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


KPolicy = Union[FixedRatio, Absolute]


@dataclass
class EsdMetrics:
    """Per-layer shape metrics of one ESD.

    ``alpha_hill`` is None when the tail fit is undefined (flat spectrum);
    the other metrics are always present.
    """

    layer_name: str
    alpha_hill: float | None
    k_used: int | None
    spectral_norm: float
    stable_rank: float


def compute_spectrum(w: WeightMatrix) -> LayerSpectrum:
    """Eigenvalues of W^T W, ascending, via singular values of W.

    Negative numerical noise is clamped to zero. Raises NonFiniteInput if
    the matrix contains NaN or Inf.
    """
    if not np.isfinite(w.values).all():
        raise NonFiniteInput(f"layer {w.name!r}: non-finite weight values")
    sv = np.linalg.svd(w.values, compute_uv=False)
    eig = np.sort(sv * sv)
    np.clip(eig, 0.0, None, out=eig)
    return LayerSpectrum(w.name, eig)


def gram_spectrum(w: WeightMatrix) -> LayerSpectrum:
    """Eigenvalues of W^T W via eigendecomposition of the smaller Gram matrix.

    Independent of the SVD route in :func:`compute_spectrum`; the two must
    agree to tight relative tolerance (cross-checked in the test suite).
    """
    if not np.isfinite(w.values).all():
        raise NonFiniteInput(f"layer {w.name!r}: non-finite weight values")
    a = w.values
    gram = a.T @ a if a.shape[1] <= a.shape[0] else a @ a.T
    eig = np.linalg.eigvalsh(gram)
    np.clip(eig, 0.0, None, out=eig)
    return LayerSpectrum(w.name, np.sort(eig))


def positive_tail(spectrum: LayerSpectrum, floor_rel: float = EIGENVALUE_FLOOR_REL) -> np.ndarray:
    """Eigenvalues above the relative floor floor_rel * lambda_max, ascending."""
    eig = spectrum.eigenvalues
    if eig.size == 0:
        return eig
    lam_max = eig[-1]
    return eig[eig > floor_rel * lam_max]


def hill_alpha(spectrum: LayerSpectrum, k: int, floor_rel: float = EIGENVALUE_FLOOR_REL) -> float:
    """Power-law tail exponent of an ESD via the Hill estimator.

    On the filtered ascending spectrum lambda_1 <= ... <= lambda_n the
    estimate is

        alpha = 1 + k / sum_{i=1..k} ln(lambda_{n-i+1} / lambda_{n-k})

    Raises InsufficientSpectrum if fewer than k+1 strictly positive
    eigenvalues remain after filtering, DegenerateTail if the log-sum is
    zero (all top-k eigenvalues equal the threshold).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    lam = positive_tail(spectrum, floor_rel)
    n = lam.size
    if n < k + 1:
        raise InsufficientSpectrum(
            f"layer {spectrum.layer_name!r}: need at least {k + 1} positive eigenvalues for k={k}, have {n}"
        )
    threshold = lam[n - k - 1]
    log_sum = float(np.sum(np.log(lam[n - k:] / threshold)))
    if log_sum <= 0.0:
        raise DegenerateTail(
            f"layer {spectrum.layer_name!r}: top-{k} eigenvalues equal the tail threshold"
        )
    return 1.0 + k / log_sum


def resolve_k(policy: KPolicy, n_positive: int) -> int:
    """Number of tail eigenvalues to fit, given the filtered spectrum size."""
    if n_positive < 2:
        raise InsufficientSpectrum(f"need at least 2 positive eigenvalues, have {n_positive}")
    if isinstance(policy, Absolute):
        return policy.k
    k = int(policy.ratio * n_positive)
    return max(1, min(k, n_positive - 1))


def shape_metrics(spectrum: LayerSpectrum, k_policy: KPolicy = FixedRatio()) -> EsdMetrics:
    """All shape metrics of one spectrum: Hill alpha, spectral norm, stable rank.

    Raises ZeroSpectrum when the largest eigenvalue is zero; propagates
    Hill-estimator errors.
    """
    eig = spectrum.eigenvalues
    if eig.size == 0 or eig[-1] <= 0.0:
        raise ZeroSpectrum(f"layer {spectrum.layer_name!r}: spectrum has no positive mass")
    lam_max = float(eig[-1])
    stable_rank = float(np.sum(eig) / lam_max)
    pos = positive_tail(spectrum)
    k = resolve_k(k_policy, pos.size)
    alpha = hill_alpha(spectrum, k)
    return EsdMetrics(
        layer_name=spectrum.layer_name,
        alpha_hill=alpha,
        k_used=k,
        spectral_norm=lam_max,
        stable_rank=stable_rank,
    )


def is_analyzable(w: WeightMatrix, min_dim: int = ANALYSIS_MIN_DIM) -> bool:
    """Whether a matrix is large enough for a meaningful tail fit."""
    return min(w.rows, w.cols) >= min_dim


def analyze_layers(
    matrices: Iterable[WeightMatrix],
    k_policy: KPolicy = FixedRatio(),
    min_dim: int = ANALYSIS_MIN_DIM,
) -> tuple[list[EsdMetrics], list[str]]:
    """Shape metrics for every analyzable matrix.

    Returns (metrics, skipped_names). Matrices below the minimum dimension
    are skipped. A layer whose tail fit is degenerate (perfectly flat
    spectrum) is kept with alpha_hill=None rather than failing the whole
    model; genuine input errors still propagate.
    """
    metrics: list[EsdMetrics] = []
    skipped: list[str] = []
    for w in matrices:
        if not is_analyzable(w, min_dim):
            skipped.append(w.name)
            continue
        spectrum = compute_spectrum(w)
        try:
            metrics.append(shape_metrics(spectrum, k_policy))
        except DegenerateTail:
            eig = spectrum.eigenvalues
            lam_max = float(eig[-1])
            metrics.append(
                EsdMetrics(
                    layer_name=w.name,
                    alpha_hill=None,
                    k_used=None,
                    spectral_norm=lam_max,
                    stable_rank=float(np.sum(eig) / lam_max),
                )
            )
    return metrics, skipped
