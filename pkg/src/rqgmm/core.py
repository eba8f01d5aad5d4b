"""Shared numerical primitives: embedding/codebook containers, nearest-code
assignment, and the residual-update step used by every quantizer.

All arithmetic runs in float64 even when inputs arrive as float32, so
argmin decisions at cluster boundaries are stable across platforms.
Distances use the direct sum-of-squared-differences form rather than the
``|x|^2 - 2xc + |c|^2`` expansion: the direct form is non-negative by
construction and bitwise-matches a per-row exhaustive scan, which is the
correctness oracle for assignment.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFitWarning, InputError
from ._parallel import run_chunks


def as_f64_matrix(data, what="data"):
    """Validate and return a finite 2-D float64 array (copying only if needed)."""
    try:
        arr = np.asarray(data, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise InputError(f"{what} is not numeric: {e}") from None
    if arr.ndim != 2:
        raise InputError(f"{what} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InputError(f"{what} must have at least one row and one column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr))[0][0])
        raise InputError(f"{what} contains non-finite values (first bad row: {bad})")
    return np.ascontiguousarray(arr)


def as_f64_vector(values, what="vector"):
    try:
        arr = np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise InputError(f"{what} is not numeric: {e}") from None
    if arr.ndim != 1:
        raise InputError(f"{what} must be 1-D, got shape {arr.shape}")
    if arr.size < 1:
        raise InputError(f"{what} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{what} contains non-finite values")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class EmbeddingMatrix:
    """N rows of D-dimensional embedding coordinates (finite, float64)."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", as_f64_matrix(self.data, "embedding matrix"))
        self.data.setflags(write=False)

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def d(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class ResidualVector:
    """A single residual at some cascade depth; level 0 is the raw embedding."""

    values: np.ndarray
    level: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", as_f64_vector(self.values, "residual"))
        self.values.setflags(write=False)
        if self.level < 0:
            raise InputError(f"residual level must be >= 0, got {self.level}")

    @property
    def d(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class Codebook:
    """K representative vectors of one quantization level."""

    vectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vectors", as_f64_matrix(self.vectors, "codebook"))
        self.vectors.setflags(write=False)

    @property
    def k(self):
        return self.vectors.shape[0]

    @property
    def d(self):
        return self.vectors.shape[1]

    def warn_if_degenerate(self):
        """Emit DegenerateFitWarning when any two entries are exactly equal."""
        # Lexicographic sort brings exact duplicates adjacent; K is small.
        order = np.lexsort(self.vectors.T[::-1])
        ordered = self.vectors[order]
        if np.any(np.all(ordered[1:] == ordered[:-1], axis=1)):
            warnings.warn(
                "codebook contains exactly duplicated vectors (degenerate fit)",
                DegenerateFitWarning,
                stacklevel=2,
            )


def squared_distances(rows, vectors, out=None):
    """Squared Euclidean distances between each row and each codebook vector.

    Direct (row - vector)**2 sums; never negative, no cancellation.
    """
    diff = rows[:, None, :] - vectors[None, :, :]
    np.square(diff, out=diff)
    return diff.sum(axis=2, out=out)


def nearest_codes(rows, vectors, threads=1):
    """Assign each row to its nearest codebook vector.

    Returns (indices, dmin2): per-row argmin index (ties -> lowest index)
    and the squared distance to the selected vector.
    """
    rows = np.asarray(rows, dtype=np.float64)
    vectors = np.asarray(vectors, dtype=np.float64)
    n, d = rows.shape
    k = vectors.shape[0]
    if vectors.shape[1] != d:
        raise InputError(f"dimension mismatch: rows have d={d}, codebook has d={vectors.shape[1]}")
    indices = np.empty(n, dtype=np.int64)
    dmin2 = np.empty(n, dtype=np.float64)

    def kernel(start, stop):
        d2 = squared_distances(rows[start:stop], vectors)
        idx = np.argmin(d2, axis=1)
        indices[start:stop] = idx
        dmin2[start:stop] = np.take_along_axis(d2, idx[:, None], axis=1)[:, 0]

    run_chunks(kernel, n, kd=k * d, threads=threads)
    return indices, dmin2


def nearest_code(r, cb):
    """Nearest codebook entry for one residual.

    Returns (index, vector); ties break toward the lowest index.
    """
    values = r.values if isinstance(r, ResidualVector) else as_f64_vector(r, "residual")
    if cb.k < 1:
        raise InputError("codebook is empty")
    if values.shape[0] != cb.d:
        raise InputError(f"dimension mismatch: residual d={values.shape[0]}, codebook d={cb.d}")
    idx, _ = nearest_codes(values[None, :], cb.vectors)
    i = int(idx[0])
    return i, cb.vectors[i].copy()


def residual_step(r, zq):
    """Subtract the selected code vector and advance one cascade level."""
    if not isinstance(r, ResidualVector):
        r = ResidualVector(r, level=0)
    zq = as_f64_vector(zq, "quantized vector")
    if zq.shape[0] != r.d:
        raise InputError(f"dimension mismatch: residual d={r.d}, quantized vector d={zq.shape[0]}")
    return ResidualVector(r.values - zq, level=r.level + 1)
