"""Sylvester Hadamard matrices and normalized fast Walsh-Hadamard transforms.

The package-wide convention is the orthonormal form Hhat = H / sqrt(n), so
that 1-D and 2-D transforms are isometries: they preserve the Frobenius norm
exactly and invert by reapplying themselves (Sylvester H is symmetric).
Non-power-of-two dimensions are zero-padded up to the next power of two; a
dimension of 1 degenerates to the identity and effectively skips that side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import Matrix


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def next_power_of_two(n: int) -> int:
    if n < 1:
        raise ValueError(f"dimension must be at least 1, got {n}")
    return 1 << (n - 1).bit_length()


@dataclass(frozen=True)
class HadamardPlan:
    """Padding plan for transforming one side of a matrix.

    logical_dim is the caller's true dimension, padded_dim the power of two
    the transform actually runs at. normalized is always True here; it is
    kept as a field so serialized plans stay self-describing.
    """

    logical_dim: int
    padded_dim: int
    normalized: bool = True

    def __post_init__(self):
        if self.logical_dim < 1:
            raise ValueError(f"logical_dim must be at least 1, got {self.logical_dim}")
        if not is_power_of_two(self.padded_dim) or self.padded_dim < self.logical_dim:
            raise ValueError(
                f"padded_dim must be a power of two >= logical_dim, got "
                f"{self.padded_dim} for logical_dim {self.logical_dim}"
            )

    @classmethod
    def for_dim(cls, n: int) -> "HadamardPlan":
        return cls(logical_dim=n, padded_dim=next_power_of_two(n))


def hadamard_matrix(n: int) -> Matrix:
    """Sylvester Hadamard matrix of order n (unnormalized, entries +-1).

    Satisfies H.T @ H == n * I exactly; entries and products stay exact
    integers in float64 for every order used here.
    """
    if not is_power_of_two(n):
        raise ValueError(f"Hadamard order must be a power of two, got {n}")
    h = np.ones((1, 1))
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h


def _fwht_rows_inplace(x: np.ndarray) -> None:
    """Unnormalized in-place FWHT of each row of a C-contiguous 2-D array."""
    n = x.shape[-1]
    h = 1
    while h < n:
        # Reshape to (..., blocks, 2, h); pairs (j, j+h) sit on the middle axis.
        y = x.reshape(x.shape[:-1] + (n // (2 * h), 2, h))
        top = y[..., 0, :].copy()
        y[..., 0, :] += y[..., 1, :]
        y[..., 1, :] = top - y[..., 1, :]
        h *= 2


def fwht_inplace(v: np.ndarray, plan: HadamardPlan | None = None) -> np.ndarray:
    """Normalized fast Walsh-Hadamard transform of a 1-D vector, in place.

    Equals hadamard_matrix(n) @ v / sqrt(n) entry for entry, in O(n log n).
    This is the one hot path in the module; the 2-D transforms below
    materialize fresh buffers instead.
    """
    if v.ndim != 1:
        raise ValueError(f"fwht_inplace expects a 1-D vector, got {v.ndim} dimensions")
    n = v.shape[0]
    if plan is not None and n != plan.padded_dim:
        raise ValueError(f"vector length {n} does not match plan padded_dim {plan.padded_dim}")
    if not is_power_of_two(n):
        raise ValueError(f"fwht length must be a power of two, got {n}")
    _fwht_rows_inplace(v.reshape(1, n))
    v *= 1.0 / np.sqrt(n)
    return v


def apply_fwht_columns(x: Matrix) -> Matrix:
    """Right-multiply by Hhat: returns x @ H_n / sqrt(n) for row-count-agnostic x.

    The column count must already be a power of two. Returns a new array.
    """
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"fwht length must be a power of two, got {n}")
    if n == 1:
        return x.copy()
    out = np.ascontiguousarray(x, dtype=np.float64).copy()
    _fwht_rows_inplace(out)
    out *= 1.0 / np.sqrt(n)
    return out


def _pad(w: Matrix, rows: int, cols: int) -> Matrix:
    if w.shape == (rows, cols):
        return np.array(w, dtype=np.float64)
    out = np.zeros((rows, cols))
    out[: w.shape[0], : w.shape[1]] = w
    return out


def transform_2d(w: Matrix, row_plan: HadamardPlan, col_plan: HadamardPlan) -> Matrix:
    """Two-sided normalized transform: Hhat_m @ pad(w) @ Hhat_n.

    Zero-padding contributes no energy, so the Frobenius norm of the output
    matches the input's.
    """
    if w.shape != (row_plan.logical_dim, col_plan.logical_dim):
        raise ValueError(
            f"matrix shape {w.shape} does not match plans "
            f"({row_plan.logical_dim}, {col_plan.logical_dim})"
        )
    out = _pad(w, row_plan.padded_dim, col_plan.padded_dim)
    if col_plan.padded_dim > 1:
        _fwht_rows_inplace(out)
        out *= 1.0 / np.sqrt(col_plan.padded_dim)
    if row_plan.padded_dim > 1:
        # Sylvester H is symmetric, so left-multiplying by Hhat_m is the
        # same row-wise butterfly run on the transpose.
        out = np.ascontiguousarray(out.T)
        _fwht_rows_inplace(out)
        out = np.ascontiguousarray(out.T)
        out *= 1.0 / np.sqrt(row_plan.padded_dim)
    return out


def inverse_transform_2d(w_prime: Matrix, row_plan: HadamardPlan, col_plan: HadamardPlan) -> Matrix:
    """Invert transform_2d and crop back to the logical dimensions.

    Hhat is symmetric and orthonormal, so Hhat.T = Hhat and the inverse is
    the forward transform applied again.
    """
    if w_prime.shape != (row_plan.padded_dim, col_plan.padded_dim):
        raise ValueError(
            f"matrix shape {w_prime.shape} does not match padded dims "
            f"({row_plan.padded_dim}, {col_plan.padded_dim})"
        )
    full_plans = (
        HadamardPlan.for_dim(row_plan.padded_dim),
        HadamardPlan.for_dim(col_plan.padded_dim),
    )
    out = transform_2d(w_prime, *full_plans)
    return np.ascontiguousarray(out[: row_plan.logical_dim, : col_plan.logical_dim])
