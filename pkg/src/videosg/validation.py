"""Input validation helpers shared across the package.

Small check functions in the spirit of sklearn's ``check_array``: they either
return a cleaned-up numpy array or raise ``ValueError`` with a message that
names the offending field.
"""

from __future__ import annotations

import numpy as np

# Tolerance under which a probability vector is silently renormalized instead
# of rejected (detector outputs routinely carry float32 rounding).
DIST_SUM_TOL = 1e-4


def as_float_vector(x, name: str = "vector") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_distribution(x, name: str = "class_dist") -> np.ndarray:
    """Validate a probability vector, renormalizing tiny sum errors."""
    arr = as_float_vector(x, name)
    if np.any(arr < 0):
        raise ValueError(f"{name} has negative entries")
    total = float(arr.sum())
    if abs(total - 1.0) > DIST_SUM_TOL:
        raise ValueError(f"{name} sums to {total:.6g}, expected 1")
    if total != 1.0:
        arr = arr / total
    return arr


def check_square_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_same_length(u: np.ndarray, v: np.ndarray, name: str = "vectors") -> None:
    if u.shape != v.shape:
        raise ValueError(f"{name} have mismatched shapes {u.shape} vs {v.shape}")


def check_unit_interval(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or not (0.0 <= value <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_nonnegative(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a finite non-negative number, got {value}")
    return value
