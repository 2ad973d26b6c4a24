"""Small input-validation helpers shared by every module.

All public entry points coerce array-likes through these helpers so that
error messages name the offending argument and the rest of the code can
assume clean float64/bool arrays.
"""

from __future__ import annotations

import numpy as np


def as_float_vector(x, name: str, allow_empty: bool = False) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} must not be empty")
    return arr


def as_float_matrix(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {arr.shape}")
    return arr


def as_bool_vector(x, n: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=bool)
    if arr.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
    return arr


def check_fs(fs, name: str = "fs") -> float:
    fs = float(fs)
    if not np.isfinite(fs) or fs <= 0:
        raise ValueError(f"non-positive {name}: {fs}")
    return fs


def check_finite(arr: np.ndarray, name: str) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = int(np.flatnonzero(bad.reshape(-1))[0])
        raise ValueError(f"non-finite value in {name} at index {idx}")


def check_unit_interval(p, name: str) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p}")
    return p
