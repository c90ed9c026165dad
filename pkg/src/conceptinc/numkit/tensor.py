"""Dense tensors are plain float64 NumPy arrays; this module guards boundaries."""

import numpy as np

from ..errors import DimensionError, NumericError

DTYPE = np.float64


def as_tensor(data, dtype=DTYPE, name="tensor") -> np.ndarray:
    """Copy ``data`` into a contiguous array, rejecting NaN/Inf."""
    arr = np.array(data, dtype=dtype, order="C", copy=True)
    if arr.ndim and 0 in arr.shape:
        raise DimensionError(f"{name}: extents must be positive, got {arr.shape}")
    check_finite(arr, name)
    return arr


def check_finite(arr, name="tensor") -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")


def zeros(shape, dtype=DTYPE) -> np.ndarray:
    return np.zeros(shape, dtype=dtype)


def eye(n, dtype=DTYPE) -> np.ndarray:
    return np.eye(n, dtype=dtype)
