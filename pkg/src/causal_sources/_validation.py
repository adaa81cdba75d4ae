"""Small input checks used on top of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import ValidationError


def as_finite_matrix(X, name="X", ndim=2):
    X = np.asarray(X, dtype=float)
    if X.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} contains non-finite values")
    return X


def as_binary_labels(y, n=None):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValidationError(f"labels must be 1-dimensional, got shape {y.shape}")
    if n is not None and y.shape[0] != n:
        raise ValidationError(f"expected {n} labels, got {y.shape[0]}")
    if not np.all(np.isin(y, (0, 1))):
        raise ValidationError("labels must be 0 or 1")
    return y.astype(int)


def require_both_classes(y, what="labels"):
    if np.unique(y).size < 2:
        raise ValidationError(f"{what} contain a single class; both 0 and 1 are required")


def check_rng(rng):
    """Turn ``None``/int/Generator into a ``numpy.random.Generator``."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise ValidationError("an explicit seed or Generator is required")
    return np.random.default_rng(rng)
