"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np

from .exceptions import InvalidWeightError, ModelMismatchError

MAX_DIMENSION = 3
MAX_LEAVES = 2 ** 14


def check_dimension_depth(d, N):
    """Validate a (dimension, depth) pair and return them as ints."""
    if not isinstance(d, numbers.Integral) or isinstance(d, bool):
        raise TypeError(f"dimension must be an integer, got {d!r}")
    if not isinstance(N, numbers.Integral) or isinstance(N, bool):
        raise TypeError(f"depth must be an integer, got {N!r}")
    d, N = int(d), int(N)
    if not 1 <= d <= MAX_DIMENSION:
        raise ValueError(f"dimension must be in [1, {MAX_DIMENSION}], got {d}")
    if N < 1:
        raise ValueError(f"depth must be positive, got {N}")
    if 2 ** (d * N) > MAX_LEAVES:
        raise ValueError(
            f"model with d={d}, N={N} has {2 ** (d * N)} leaves; limit is {MAX_LEAVES}"
        )
    return d, N


def check_leaf_values(values, n_leaves, name="values"):
    """Return ``values`` as a finite 1-d float64 array of length ``n_leaves``."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.shape[0] != n_leaves:
        raise ValueError(f"{name} has {arr.shape[0]} entries, expected {n_leaves}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_positive(values, name="weight"):
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise InvalidWeightError(f"{name} must be strictly positive and finite")
    return arr


def check_same_model(*objects):
    """Raise ModelMismatchError unless every object has the same ``model``."""
    models = [obj.model for obj in objects if obj is not None]
    for other in models[1:]:
        if other != models[0]:
            raise ModelMismatchError(f"model mismatch: {models[0]} vs {other}")
    return models[0] if models else None


def check_n_features(X, n_features):
    """2-d sample matrix check for the estimator wrappers."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[np.newaxis, :]
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {X.shape}")
    if X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite entries")
    return X


def depth_from_n_features(n_features, d):
    """Infer the depth N from 2**(d*N) leaf values."""
    n_features = int(n_features)
    if n_features < 2 or n_features & (n_features - 1):
        raise ValueError(f"number of features must be a power of two, got {n_features}")
    bits = n_features.bit_length() - 1
    if bits % d:
        raise ValueError(f"{n_features} leaves is not 2**(d*N) for d={d}")
    return bits // d
