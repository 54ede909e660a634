"""Input-validation helpers used at package boundaries."""

from __future__ import annotations

import numpy as np

from .exceptions import ValidationError


def check_finite_array(value, name: str, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains non-finite values")
    return arr


def check_fraction(value: float, name: str, *, closed_right: bool = True) -> float:
    v = float(value)
    ok = 0.0 < v <= 1.0 if closed_right else 0.0 <= v < 1.0
    if not ok:
        bounds = "(0, 1]" if closed_right else "[0, 1)"
        raise ValidationError(f"{name}: {value} outside {bounds}")
    return v


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    v = int(value)
    if v < minimum:
        raise ValidationError(f"{name}: {value} must be >= {minimum}")
    return v
