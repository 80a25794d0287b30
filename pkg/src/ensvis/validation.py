"""Input validation helpers shared by the estimators and the functional API."""

import numpy as np

from .errors import DimensionError, NumericalFailureError


def as_matrix(X, name="X", dtype=np.float64):
    """Coerce to a 2-D float array and reject non-finite entries."""
    X = np.asarray(X, dtype=dtype)
    if X.ndim == 1:
        X = X[np.newaxis, :]
    if X.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NumericalFailureError(f"{name} contains non-finite entries")
    return X


def as_vector(x, name="x", dtype=np.float64):
    x = np.asarray(x, dtype=dtype)
    if x.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {x.shape}")
    return x


def check_dim(actual, expected, name="input"):
    if actual != expected:
        raise DimensionError(f"{name} has dimension {actual}, expected {expected}")


def l2_normalize_rows(X, eps=0.0):
    """Scale each row to unit L2 norm; all-zero rows are left untouched."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    M = X[np.newaxis, :] if single else X
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    safe = np.where(norms > eps, norms, 1.0)
    out = M / safe
    return out[0] if single else out
