"""Input validation helpers shared by the estimator layer.

Every estimator in this package uses one matrix convention: the last two
columns of X are latitude and longitude in degrees, everything before them
is an appearance feature.
"""
from __future__ import annotations

import numpy as np

from .errors import DataError, InvalidCoordinateError


def split_feature_geo(X, n_features: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Validate X and return (features, lat_deg, lon_deg).

    Checks: 2-D, at least one feature column plus the two geo columns, all
    finite, latitude in [-90, 90], longitude in [-180, 180] (exactly 180
    wraps to -180).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"X must be 2-D, got shape {X.shape}")
    if X.shape[1] < 3:
        raise DataError("X needs at least one feature column plus lat/lon columns")
    if n_features is not None and X.shape[1] != n_features + 2:
        raise DataError(f"X has {X.shape[1]} columns, expected {n_features} features + 2 geo")
    if not np.isfinite(X).all():
        raise DataError("X contains non-finite values")
    features = X[:, :-2]
    lat = X[:, -2]
    lon = X[:, -1].copy()
    if np.any(lat < -90.0) or np.any(lat > 90.0):
        raise InvalidCoordinateError("latitude column outside [-90, 90]")
    if np.any(lon < -180.0) or np.any(lon > 180.0):
        raise InvalidCoordinateError("longitude column outside [-180, 180]")
    lon[lon == 180.0] = -180.0
    return features, lat, lon


def check_labels(y, n_labels: int | None = None) -> np.ndarray:
    """Coerce labels to int64 and range-check them."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise DataError(f"y must be 1-D, got shape {y.shape}")
    if y.size == 0:
        raise DataError("y is empty")
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.rint(np.asarray(y, dtype=np.float64))
        if not np.allclose(rounded, y):
            raise DataError("labels must be integers")
        y = rounded
    y = y.astype(np.int64)
    if y.min() < 0:
        raise DataError("labels must be non-negative")
    if n_labels is not None and y.max() >= n_labels:
        raise DataError(f"label {y.max()} outside [0, {n_labels})")
    return y


def infer_n_labels(y: np.ndarray, n_labels: int | None) -> int:
    inferred = int(y.max()) + 1
    if n_labels is None:
        return inferred
    if n_labels < inferred:
        raise DataError(f"n_labels={n_labels} but labels go up to {inferred - 1}")
    return int(n_labels)
