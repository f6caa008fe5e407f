"""Input checks shared by the estimators."""

import numpy as np

from .exceptions import DataError, ShapeError
from .simulation import WINDOW_LEN


def check_windows(X, length=WINDOW_LEN):
    """Return ``X`` as a finite float64 array of shape ``(n, length)``.

    ``(n, 1, length)`` inputs are squeezed.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3 and X.shape[1] == 1:
        X = X[:, 0, :]
    if X.ndim == 1 and X.size == length:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != length:
        raise ShapeError(f"expected windows of shape (n, {length}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("windows contain NaN or Inf")
    return X


def check_labels(y, n=None):
    """Validate an ``(n, 3)`` label matrix ``[class, position, reflectance]``."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != 3:
        raise ShapeError(f"labels must have shape (n, 3), got {y.shape}")
    if n is not None and y.shape[0] != n:
        raise ShapeError(f"{y.shape[0]} labels for {n} windows")
    cls = y[:, 0]
    if not np.all((cls == 0) | (cls == 1)):
        raise DataError("class labels must be 0 or 1")
    pos = cls == 1
    if not np.all(np.isfinite(y[pos, 1:])):
        raise DataError("class-1 rows need finite position and reflectance")
    return y
