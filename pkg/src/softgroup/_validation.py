"""Input validation helpers shared by the estimators and functional API."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_coords(coords, name="coords", dtype=np.float64):
    """Return ``coords`` as a finite (N, 3) array."""
    coords = check_array(coords, dtype=dtype, ensure_min_samples=0, input_name=name)
    if coords.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {coords.shape}")
    return coords


def check_index_array(ids, n=None, name="ids"):
    ids = np.asarray(ids)
    if ids.size == 0:
        return np.zeros(0, dtype=np.int64)
    if ids.ndim != 1 or not np.issubdtype(ids.dtype, np.integer):
        raise ValueError(f"{name} must be a 1-D integer array")
    ids = ids.astype(np.int64, copy=False)
    if ids.min() < 0 or (n is not None and ids.max() >= n):
        raise ValueError(f"{name} out of range [0, {n})")
    return ids


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_open_unit(value, name):
    if not isinstance(value, numbers.Real) or not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in the open interval (0, 1), got {value!r}")
    return float(value)


def check_min_points(value):
    if not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"min_points must be an integer >= 1, got {value!r}")
    return int(value)


def check_unit_interval(value, name):
    if not np.isfinite(value) or value < 0.0 or value > 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def readonly(arr):
    arr = np.asarray(arr)
    arr.flags.writeable = False
    return arr
