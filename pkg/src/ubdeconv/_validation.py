"""Input validation helpers shared by the solvers and estimators."""

import numbers

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes are incompatible."""


def check_scalar(value, name, *, min_val=None, strict=False, integer=False):
    """Validate a scalar parameter and return it as float or int."""
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind):
        raise TypeError(f"{name} must be {'an integer' if integer else 'a real number'}, got {value!r}")
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    if min_val is not None:
        if strict and not value > min_val:
            raise ValueError(f"{name} must be > {min_val}, got {value!r}")
        if not strict and not value >= min_val:
            raise ValueError(f"{name} must be >= {min_val}, got {value!r}")
    return int(value) if integer else float(value)


def as_channels(image, name="image"):
    """Return a float64 ``(C, H, W)`` view of a 2-D or channel-last 3-D image.

    Accepts ``(H, W)``, ``(H, W, 3)`` and ``(H, W, 1)``. Values must be finite.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[np.newaxis]
    elif arr.ndim == 3 and arr.shape[2] in (1, 3):
        arr = np.moveaxis(arr, 2, 0)
    else:
        raise DimensionError(f"{name} must have shape (H, W) or (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def from_channels(arr, like_ndim):
    """Inverse of :func:`as_channels` for an image originally of ``like_ndim`` dims."""
    if like_ndim == 2:
        return arr[0].copy()
    return np.moveaxis(arr, 0, 2).copy()


def check_mask(mask, shape, name="mask"):
    """Validate a boolean observation mask against a ``(C, H, W)`` shape."""
    if mask is None:
        return np.ones(shape, dtype=bool)
    m = np.asarray(mask)
    if m.dtype != bool:
        raise TypeError(f"{name} must be boolean, got dtype {m.dtype}")
    if m.ndim == 2:
        m = np.broadcast_to(m, shape)
    elif m.ndim == 3 and m.shape[2] == shape[0] and m.shape[:2] == shape[1:]:
        m = np.moveaxis(m, 2, 0)
    if m.shape != tuple(shape):
        raise DimensionError(f"{name} shape {np.shape(mask)} does not match image shape")
    if not m.any(axis=(1, 2)).all():
        raise ValueError(f"{name} must observe at least one pixel per channel")
    return np.ascontiguousarray(m)


def check_same_shape(a, b, what="arrays"):
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"{what} have mismatched shapes {np.shape(a)} and {np.shape(b)}")
