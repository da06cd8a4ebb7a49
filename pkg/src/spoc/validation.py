"""Small input-validation helpers shared across estimators."""

import numpy as np

from .errors import DimensionMismatch, NonFiniteValue


def as_matrix(X, name="X", dtype=np.float64):
    """Coerce to a 2-D float array, rejecting non-finite values."""
    X = np.asarray(X, dtype=dtype)
    if X.ndim == 1:
        X = X[np.newaxis, :]
    if X.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got ndim={X.ndim}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteValue(f"{name} contains NaN or Inf")
    return X


def as_vector(v, name="v", dtype=np.float64):
    """Coerce to a 1-D float array, rejecting non-finite values."""
    v = np.asarray(v, dtype=dtype)
    if v.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got ndim={v.ndim}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteValue(f"{name} contains NaN or Inf")
    return v


def check_dim(v, expected, name="v"):
    if v.shape[-1] != expected:
        raise DimensionMismatch(
            f"{name} has dimension {v.shape[-1]}, expected {expected}"
        )
    return v


def check_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted; call fit() first"
        )
