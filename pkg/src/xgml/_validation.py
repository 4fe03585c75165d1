"""Input checks shared by the estimators."""

import numpy as np

from .exceptions import NonFiniteTarget, TooFewRows, WidthMismatch, XgmlError


def check_features(X, n_features=None) -> np.ndarray:
    """2D finite float64 array, optionally of a fixed width."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :] if n_features is not None and X.size == n_features else X[:, None]
    if X.ndim != 2:
        raise XgmlError(f"expected a 2D feature matrix, got {X.ndim}D")
    if X.shape[0] == 0:
        raise TooFewRows("feature matrix has no rows")
    if n_features is not None and X.shape[1] != n_features:
        raise WidthMismatch(f"expected {n_features} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise XgmlError("features contain non-finite values")
    return X


def check_targets(y, n_rows) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != n_rows:
        raise XgmlError(f"{y.size} targets for {n_rows} rows")
    if not np.all(np.isfinite(y)):
        raise NonFiniteTarget("targets contain non-finite values")
    return y
