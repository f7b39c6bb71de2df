"""Post-training quantizers: uniform affine, stochastic rounding, 1-D
k-means codebooks, and Hadamard-rotated uniform (the distribution-aware
scheme).

All schemes are per-tensor. The affine convention is

    codes in [0, 2^bits - 1],  scale = (max - min) / (2^bits - 1),
    dequant(q) = q * scale + offset,  offset = observed min,

which reproduces the tensor's endpoints exactly. Codes are kept widened in
int64 in memory; the file container packs them down by bit width.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hadamard import HadamardPlan, inverse_transform_2d, transform_2d
from .linalg import Matrix, Rng

SCHEME_UNIFORM = "uniform"
SCHEME_STOCHASTIC = "stochastic"
SCHEME_KMEANS = "kmeans"
SCHEME_DHQ = "dhq"
SCHEMES = (SCHEME_UNIFORM, SCHEME_STOCHASTIC, SCHEME_KMEANS, SCHEME_DHQ)

ROUND_NEAREST = "nearest"
ROUND_STOCHASTIC = "stochastic"


@dataclass
class QuantConfig:
    scheme: str = SCHEME_DHQ
    weight_bits: int = 8
    act_bits: int = 8
    rounding: str = ROUND_NEAREST  # weight rounding
    act_rounding: str = ROUND_NEAREST
    kmeans_max_iters: int = 300
    kmeans_tol: float = 1e-6

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        for name in ("weight_bits", "act_bits"):
            bits = getattr(self, name)
            if not 2 <= bits <= 32:
                raise ValueError(f"{name} must be in [2, 32], got {bits}")
        if self.scheme == SCHEME_KMEANS and self.weight_bits > 16:
            raise ValueError(f"kmeans codebooks support at most 16 bits, got {self.weight_bits}")
        for name in ("rounding", "act_rounding"):
            mode = getattr(self, name)
            if mode not in (ROUND_NEAREST, ROUND_STOCHASTIC):
                raise ValueError(f"{name} must be 'nearest' or 'stochastic', got {mode!r}")
        if self.kmeans_max_iters < 1:
            raise ValueError("kmeans_max_iters must be at least 1")


@dataclass
class QuantizedTensor:
    """Integer codes plus everything needed to reconstruct the float tensor."""

    values: np.ndarray  # int64 codes, shape (rows, cols)
    scale: float
    offset: float  # dequant = values * scale + offset
    bits: int
    scheme: str
    rounding: str = ROUND_NEAREST
    codebook: np.ndarray | None = None  # kmeans only, sorted, 2^bits entries
    transform: tuple[HadamardPlan, HadamardPlan] | None = None  # dhq only

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.int64)
        if self.values.ndim != 2:
            raise ValueError(f"codes must be 2-D, got {self.values.ndim} dimensions")
        if (self.codebook is not None) != (self.scheme == SCHEME_KMEANS):
            raise ValueError("codebook must be present exactly for the kmeans scheme")
        if (self.transform is not None) != (self.scheme == SCHEME_DHQ):
            raise ValueError("transform plans must be present exactly for the dhq scheme")
        lo, hi = int(self.values.min()), int(self.values.max())
        if lo < 0 or hi > (1 << self.bits) - 1:
            raise ValueError(f"codes [{lo}, {hi}] out of range for {self.bits} bits")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def zero_point(self) -> int:
        """Code whose dequantized value is nearest zero (reporting only)."""
        if self.scale == 0:
            return 0
        q = int(round(-self.offset / self.scale))
        return min(max(q, 0), (1 << self.bits) - 1)

    @property
    def logical_shape(self) -> tuple[int, int]:
        """Shape of the tensor dequantize() reconstructs."""
        if self.transform is not None:
            return (self.transform[0].logical_dim, self.transform[1].logical_dim)
        return (self.rows, self.cols)


def _check_finite(x: Matrix) -> None:
    finite = np.isfinite(x)
    if not finite.any():
        raise ValueError("cannot quantize: input has no finite values")
    if not finite.all():
        raise ValueError("cannot quantize: input contains non-finite values")


def _round_codes(t: np.ndarray, levels: int, rounding: str, rng: Rng | None) -> np.ndarray:
    if rounding == ROUND_NEAREST:
        codes = np.rint(t)  # ties to even
    elif rounding == ROUND_STOCHASTIC:
        if rng is None:
            raise ValueError("stochastic rounding requires an rng")
        floor = np.floor(t)
        codes = floor + (rng.random(t.shape) < (t - floor))
    else:
        raise ValueError(f"unknown rounding mode {rounding!r}")
    return np.clip(codes, 0, levels).astype(np.int64)


def affine_params(lo: float, hi: float, bits: int) -> tuple[float, float]:
    """(scale, offset) mapping [lo, hi] onto codes [0, 2^bits - 1].

    A degenerate range gets scale 1 so constant tensors round-trip exactly.
    """
    if hi < lo:
        raise ValueError(f"empty range [{lo}, {hi}]")
    if hi == lo:
        return 1.0, lo
    return (hi - lo) / ((1 << bits) - 1), lo


def quantize_with_params(
    x: Matrix, bits: int, scale: float, offset: float, rounding: str = ROUND_NEAREST,
    rng: Rng | None = None,
) -> np.ndarray:
    """Affine-quantize against fixed (scale, offset), e.g. calibrated ranges."""
    levels = (1 << bits) - 1
    if scale == 0:
        raise ValueError("scale must be nonzero")
    t = (x - offset) / scale
    return _round_codes(t, levels, rounding, rng)


def quantize_uniform(
    x: Matrix, bits: int, rounding: str = ROUND_NEAREST, rng: Rng | None = None
) -> QuantizedTensor:
    """Per-tensor affine quantizer over the observed min/max range.

    Nearest rounding uses ties-to-even and the absolute error is bounded by
    scale/2; stochastic rounding is unbiased in expectation.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x)
    lo, hi = float(x.min()), float(x.max())
    scale, offset = affine_params(lo, hi, bits)
    if hi == lo:
        codes = np.zeros_like(x, dtype=np.int64)
    else:
        codes = quantize_with_params(x, bits, scale, offset, rounding, rng)
    return QuantizedTensor(codes, scale, offset, bits, SCHEME_UNIFORM, rounding)


def lloyd_1d(
    values: np.ndarray, k: int, max_iters: int, tol: float
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """1-D Lloyd's algorithm with quantile initialization.

    Returns (sorted codebook of k centroids, assignment codes, per-iteration
    within-cluster MSE). Empty clusters keep their previous centroid, which
    preserves both the sorted order and the monotone non-increasing MSE.
    """
    flat = np.sort(values.ravel())
    n = flat.size
    centers = flat[np.minimum((((np.arange(k) + 0.5) * n) // k).astype(np.int64), n - 1)].astype(
        np.float64
    )
    a = values.ravel()
    mse_history: list[float] = []
    codes = np.zeros(a.size, dtype=np.int64)
    for _ in range(max_iters):
        bounds = (centers[1:] + centers[:-1]) / 2.0
        codes = np.searchsorted(bounds, a)
        counts = np.bincount(codes, minlength=k)
        sums = np.bincount(codes, weights=a, minlength=k)
        moved = np.divide(sums, counts, out=centers.copy(), where=counts > 0)
        shift = float(np.max(np.abs(moved - centers)))
        centers = moved
        mse_history.append(float(np.mean((a - centers[codes]) ** 2)))
        if shift < tol:
            break
    return centers, codes.reshape(values.shape), mse_history


def quantize_kmeans(
    x: Matrix, bits: int, cfg: QuantConfig, rng: Rng | None = None
) -> QuantizedTensor:
    """Codebook quantizer: 2^bits centroids fitted by 1-D Lloyd's algorithm.

    Inputs with at most 2^bits distinct values get an exact codebook (padded
    by duplicating the last value), so reconstruction is lossless there. The
    rng parameter is accepted for interface symmetry; quantile
    initialization makes the fit deterministic without it.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x)
    k = 1 << bits
    distinct = np.unique(x)
    if distinct.size <= k:
        codebook = np.concatenate([distinct, np.full(k - distinct.size, distinct[-1])])
        codes = np.searchsorted(distinct, x).astype(np.int64)
    else:
        codebook, codes, _ = lloyd_1d(x, k, cfg.kmeans_max_iters, cfg.kmeans_tol)
    return QuantizedTensor(
        codes, 1.0, 0.0, bits, SCHEME_KMEANS, ROUND_NEAREST, codebook=codebook
    )


def quantize_dhq_weight(
    w: Matrix, bits: int, rounding: str = ROUND_NEAREST, rng: Rng | None = None
) -> QuantizedTensor:
    """Two-sided Hadamard rotation followed by the uniform affine quantizer.

    The rotation is an isometry, so the Frobenius norm of the reconstruction
    error equals the norm of the quantization error in the rotated domain.
    Plans (including zero-padding for non-power-of-two sides) are recorded
    on the result so dequantize can undo the transform.
    """
    w = np.asarray(w, dtype=np.float64)
    _check_finite(w)
    row_plan = HadamardPlan.for_dim(w.shape[0])
    col_plan = HadamardPlan.for_dim(w.shape[1])
    w_rot = transform_2d(w, row_plan, col_plan)
    qt = quantize_uniform(w_rot, bits, rounding, rng)
    return QuantizedTensor(
        qt.values, qt.scale, qt.offset, bits, SCHEME_DHQ, rounding,
        transform=(row_plan, col_plan),
    )


def quantize_weight(w: Matrix, cfg: QuantConfig, rng: Rng | None = None) -> QuantizedTensor:
    """Scheme dispatcher used by the model-level quantization pipeline."""
    if cfg.scheme == SCHEME_UNIFORM:
        return quantize_uniform(w, cfg.weight_bits, cfg.rounding, rng)
    if cfg.scheme == SCHEME_STOCHASTIC:
        qt = quantize_uniform(w, cfg.weight_bits, ROUND_STOCHASTIC, rng)
        return QuantizedTensor(
            qt.values, qt.scale, qt.offset, qt.bits, SCHEME_STOCHASTIC, ROUND_STOCHASTIC
        )
    if cfg.scheme == SCHEME_KMEANS:
        return quantize_kmeans(w, cfg.weight_bits, cfg, rng)
    if cfg.scheme == SCHEME_DHQ:
        return quantize_dhq_weight(w, cfg.weight_bits, cfg.rounding, rng)
    raise ValueError(f"unknown scheme {cfg.scheme!r}")


def dequantize_stored(q: QuantizedTensor) -> Matrix:
    """Reconstruct the stored-domain tensor (rotated domain for dhq)."""
    if q.scheme == SCHEME_KMEANS:
        return q.codebook[q.values]
    return q.values * q.scale + q.offset


def dequantize(q: QuantizedTensor) -> Matrix:
    """Reconstruct the logical float tensor, undoing any rotation/padding."""
    stored = dequantize_stored(q)
    if q.scheme == SCHEME_DHQ:
        return inverse_transform_2d(stored, *q.transform)
    return stored
