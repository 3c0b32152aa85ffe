"""Input validation helpers.

scikit-learn's ``check_array`` rejects complex input, so the estimator and
the functional API share these small complex-aware checks instead.
"""
import numbers

import numpy as np

from .exceptions import (
    DimensionMismatchError,
    InvalidDimensionError,
    InvalidParameterError,
    InvalidVarianceError,
)


def check_dimension(n, name="n", minimum=1):
    if isinstance(n, bool) or not isinstance(n, numbers.Integral):
        raise InvalidDimensionError(f"{name} must be an integer, got {n!r}")
    if n < minimum:
        raise InvalidDimensionError(f"{name} must be >= {minimum}, got {n}")
    return int(n)


def check_variance(v, name="v"):
    """Return ``v`` as a float, raising if it is not a finite positive number."""
    try:
        v = float(v)
    except (TypeError, ValueError):
        raise InvalidVarianceError(f"{name} must be a positive number, got {v!r}") from None
    if not np.isfinite(v) or v <= 0.0:
        raise InvalidVarianceError(f"{name} must be finite and > 0, got {v}")
    return v


def check_positive(x, name, allow_zero=False):
    try:
        x = float(x)
    except (TypeError, ValueError):
        raise InvalidParameterError(f"{name} must be a number, got {x!r}") from None
    bad = (x < 0.0) if allow_zero else (x <= 0.0)
    if not np.isfinite(x) or bad:
        bound = ">= 0" if allow_zero else "> 0"
        raise InvalidParameterError(f"{name} must be finite and {bound}, got {x}")
    return x


def check_vector(x, name="x", size=None):
    """Coerce ``x`` to a 1-D complex array, optionally checking its length."""
    x = np.asarray(x)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1:
        raise DimensionMismatchError(f"{name} must be 1-D, got shape {x.shape}")
    if size is not None and x.shape[0] != size:
        raise DimensionMismatchError(f"{name} has length {x.shape[0]}, expected {size}")
    x = x.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(x)):
        raise InvalidParameterError(f"{name} contains non-finite entries")
    return x


def check_matrix(a, name="A", shape=None):
    a = np.asarray(a)
    if a.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got shape {a.shape}")
    if shape is not None and a.shape != tuple(shape):
        raise DimensionMismatchError(f"{name} has shape {a.shape}, expected {tuple(shape)}")
    a = a.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(a)):
        raise InvalidParameterError(f"{name} contains non-finite entries")
    return a
