"""Input validation helpers shared by the kernels and estimators."""

import numpy as np

from .exceptions import ConfigurationError, ShapeMismatchError


def check_array(x, ndim=None, name="array", dtype=np.float64, allow_nan=False):
    """Convert ``x`` to a contiguous float array and check its rank.

    Raises:
        ShapeMismatchError: rank differs from ``ndim``.
        ValueError: non-finite entries when ``allow_nan`` is False.
    """
    arr = np.ascontiguousarray(x, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeMismatchError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not allow_nan and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a, b, names=("pred", "target")):
    if a.shape != b.shape:
        raise ShapeMismatchError(
            f"{names[0]} shape {a.shape} does not match {names[1]} shape {b.shape}"
        )


def check_nonnegative(value, name):
    if not np.isfinite(value) or value < 0:
        raise ConfigurationError(f"{name} must be a finite non-negative number, got {value}")
    return float(value)


def check_positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise ConfigurationError(f"{name} must be positive, got {value}")
    return float(value)


def check_range(pair, name, lower=None, upper=None):
    """Validate a ``(lo, hi)`` range and return it as a float tuple."""
    try:
        lo, hi = (float(v) for v in pair)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{name} must be a (min, max) pair, got {pair!r}") from None
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ConfigurationError(f"{name} bounds must be finite")
    if lo > hi:
        raise ConfigurationError(f"{name}: min {lo} > max {hi}")
    if lower is not None and lo < lower:
        raise ConfigurationError(f"{name}: min {lo} below allowed {lower}")
    if upper is not None and hi > upper:
        raise ConfigurationError(f"{name}: max {hi} above allowed {upper}")
    return lo, hi
