"""Distribution statistics and image quality metrics.

Moments use population definitions (kurtosis is reported as excess
kurtosis, 0 for a Gaussian) so the transform-gaussianization checks read as
"goes to zero". SSIM follows the canonical settings: 11x11 Gaussian window
with sigma 1.5, K1=0.01, K2=0.03, dynamic range 255, averaged over valid
windows; color images average the per-channel scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .hadamard import HadamardPlan, transform_2d
from .imageio import ImageBuffer
from .model import SirenModel, forward
from .trainer import Dataset

PSNR_CAP_DB = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

HIST_BINS = 128

_ANALYSIS_CHUNK_ROWS = 16384


@dataclass(frozen=True)
class MomentStats:
    mean: float
    std: float
    skewness: float
    excess_kurtosis: float
    min: float
    max: float
    n: int


@dataclass
class Histogram:
    bin_edges: np.ndarray  # len(counts) + 1, strictly increasing
    counts: np.ndarray  # int64
    total: int
    source_label: str = ""

    def __post_init__(self):
        if int(self.counts.sum()) != self.total:
            raise ValueError("histogram counts do not sum to total")
        if not np.all(np.diff(self.bin_edges) > 0):
            raise ValueError("histogram bin edges must be strictly increasing")


class _MomentAccumulator:
    """Streaming power sums; exact enough in float64 for our value ranges."""

    def __init__(self):
        self.n = 0
        self.s1 = self.s2 = self.s3 = self.s4 = 0.0
        self.lo = np.inf
        self.hi = -np.inf

    def add(self, x: np.ndarray) -> None:
        x = x.ravel()
        self.n += x.size
        self.s1 += float(np.sum(x))
        x2 = x * x
        self.s2 += float(np.sum(x2))
        self.s3 += float(np.sum(x2 * x))
        self.s4 += float(np.sum(x2 * x2))
        self.lo = min(self.lo, float(x.min()))
        self.hi = max(self.hi, float(x.max()))

    def finalize(self) -> MomentStats:
        if self.n < 2:
            raise ValueError("need at least 2 samples for moment statistics")
        n = self.n
        mean = self.s1 / n
        m2 = self.s2 / n - mean**2
        m3 = self.s3 / n - 3 * mean * self.s2 / n + 2 * mean**3
        m4 = self.s4 / n - 4 * mean * self.s3 / n + 6 * mean**2 * self.s2 / n - 3 * mean**4
        std = float(np.sqrt(max(m2, 0.0)))
        if m2 > 0:
            skew = m3 / m2**1.5
            kurt = m4 / m2**2 - 3.0
        else:
            skew = 0.0
            kurt = 0.0
        return MomentStats(mean, std, float(skew), float(kurt), self.lo, self.hi, n)


def moment_stats(x: np.ndarray) -> MomentStats:
    acc = _MomentAccumulator()
    acc.add(np.asarray(x, dtype=np.float64))
    return acc.finalize()


def histogram(x: np.ndarray, bins: int = HIST_BINS, label: str = "") -> Histogram:
    """Uniform-bin histogram over the observed range."""
    x = np.asarray(x, dtype=np.float64).ravel()
    counts, edges = np.histogram(x, bins=bins)
    return Histogram(edges, counts.astype(np.int64), int(x.size), label)


def _as_float_image(img: ImageBuffer) -> np.ndarray:
    return img.pixels.astype(np.float64)


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """10 log10(255^2 / MSE) in dB, capped at 99 (the identical-image sentinel)."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}")
    mse = float(np.mean((_as_float_image(a) - _as_float_image(b)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(255.0**2 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_single(x: np.ndarray, y: np.ndarray) -> float:
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * 255.0) ** 2
    c2 = (SSIM_K2 * 255.0) ** 2
    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(y, win, mode="valid")
    var_x = convolve2d(x * x, win, mode="valid") - mu_x**2
    var_y = convolve2d(y * y, win, mode="valid") - mu_y**2
    cov = convolve2d(x * y, win, mode="valid") - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean structural similarity; color images average per-channel scores."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}")
    if a.height < SSIM_WINDOW or a.width < SSIM_WINDOW:
        raise ValueError(
            f"image {a.width}x{a.height} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    xa, xb = _as_float_image(a), _as_float_image(b)
    scores = [_ssim_single(xa[:, :, c], xb[:, :, c]) for c in range(a.channels)]
    return float(np.mean(scores))


def collect_distributions(
    model: SirenModel,
    data: Dataset,
    with_hadamard: bool = False,
    bins: int = HIST_BINS,
) -> dict[str, tuple[Histogram, MomentStats]]:
    """Per-layer weight and activation distributions.

    Produces one entry per layer for raw weights (plus the Hadamard-rotated
    weights when requested) and one per layer for post-activation values
    captured over the full grid. Activation statistics stream over grid
    chunks: one pass for moments and ranges, one for histograms.
    """
    out: dict[str, tuple[Histogram, MomentStats]] = {}
    for li, lyr in enumerate(model.layers, start=1):
        label = f"layer{li}.weight"
        out[label] = (histogram(lyr.weight, bins, label), moment_stats(lyr.weight))
        if with_hadamard:
            plans = (HadamardPlan.for_dim(lyr.weight.shape[0]),
                     HadamardPlan.for_dim(lyr.weight.shape[1]))
            rotated = transform_2d(lyr.weight, *plans)
            label = f"layer{li}.weight.post_hadamard"
            out[label] = (histogram(rotated, bins, label), moment_stats(rotated))

    n = data.coords.shape[0]
    accs = [_MomentAccumulator() for _ in model.layers]
    for start in range(0, n, _ANALYSIS_CHUNK_ROWS):
        _, trace = forward(model, data.coords[start : start + _ANALYSIS_CHUNK_ROWS], capture=True)
        for acc, post in zip(accs, trace.post):
            acc.add(post)
    stats = [acc.finalize() for acc in accs]
    counts = [np.zeros(bins, dtype=np.int64) for _ in model.layers]
    edges = [
        np.histogram_bin_edges([], bins=bins, range=(st.min, st.max)) if st.max > st.min
        else np.histogram_bin_edges([], bins=bins, range=(st.min - 0.5, st.max + 0.5))
        for st in stats
    ]
    for start in range(0, n, _ANALYSIS_CHUNK_ROWS):
        _, trace = forward(model, data.coords[start : start + _ANALYSIS_CHUNK_ROWS], capture=True)
        for li, post in enumerate(trace.post):
            c, _ = np.histogram(post, bins=edges[li])
            counts[li] += c
    for li, st in enumerate(stats):
        label = f"layer{li + 1}.act.post"
        out[label] = (Histogram(edges[li], counts[li], st.n, label), st)
    return out


def write_histogram_csv(hist: Histogram, path: str) -> None:
    with open(path, "w") as f:
        f.write("label,bin_left,bin_right,count\n")
        for left, right, count in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
            f.write(f"{hist.source_label},{left:.17g},{right:.17g},{int(count)}\n")


def write_moments_csv(stats: dict[str, MomentStats], path: str) -> None:
    with open(path, "w") as f:
        f.write("label,n,mean,std,skewness,excess_kurtosis,min,max\n")
        for label, st in stats.items():
            f.write(
                f"{label},{st.n},{st.mean:.17g},{st.std:.17g},{st.skewness:.17g},"
                f"{st.excess_kurtosis:.17g},{st.min:.17g},{st.max:.17g}\n"
            )
