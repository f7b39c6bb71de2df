"""Dense float64 matrix helpers and deterministic random streams.

Every array crossing a module boundary in this package is a 2-D, row-major
(C-contiguous) float64 ndarray. The helpers here validate that contract and
give the rest of the code one place to get reproducible randomness from.
"""

from __future__ import annotations

import numpy as np

# Type aliases used throughout the package.
Matrix = np.ndarray
Rng = np.random.Generator

# Named sub-streams split off the root seed, one per source of randomness.
STREAM_INIT = 0
STREAM_BATCH = 1
STREAM_KMEANS = 2
STREAM_ROUND = 3


def as_matrix(data) -> Matrix:
    """Coerce input to a 2-D row-major float64 matrix, validating its shape."""
    a = np.ascontiguousarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got {a.ndim} dimensions")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"matrix dimensions must be at least 1x1, got {a.shape}")
    return a


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product a @ b with an explicit inner-dimension check."""
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul dimension mismatch: {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def transpose(a: Matrix) -> Matrix:
    """Transpose, returned as a fresh row-major buffer."""
    return np.ascontiguousarray(a.T)


def frobenius_norm(a: Matrix) -> float:
    """sqrt of the sum of squared entries."""
    return float(np.sqrt(np.sum(a * a)))


def make_rng(seed: int, stream: int = 0) -> Rng:
    """Deterministic generator for (seed, stream).

    Philox is counter-based, so the same (seed, stream) pair yields a
    byte-identical sequence on every platform and run. Distinct streams
    derived from one root seed are statistically independent; parallel or
    multi-purpose code must take its own stream rather than sharing one
    generator.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))
