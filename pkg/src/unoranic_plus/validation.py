"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

__all__ = ["check_image_batch", "check_labels"]


def check_image_batch(X, *, name: str = "X") -> np.ndarray:
    """Validate an (N, C, H, W) image block with values in [0, 1].

    Returns a float64 copy; raises ValueError with the offending property
    named otherwise.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise ValueError(f"{name} must be 4-D (N, C, H, W), got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(
            f"{name} values must lie in [0, 1], got range [{X.min():.4g}, {X.max():.4g}]"
        )
    return X


def check_labels(y, n_samples: int, *, name: str = "y") -> np.ndarray:
    """Validate integer class labels 0..K-1 covering every class."""
    y = np.asarray(y)
    if y.shape != (n_samples,):
        raise ValueError(f"{name} must have shape ({n_samples},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.round(y)
        if not np.array_equal(rounded, y):
            raise ValueError(f"{name} must be integer class labels")
        y = rounded.astype(np.int64)
    y = y.astype(np.int64)
    if y.min() < 0:
        raise ValueError(f"{name} contains negative labels")
    k = int(y.max()) + 1
    missing = sorted(set(range(k)) - set(y.tolist()))
    if missing:
        raise ValueError(f"{name} must use contiguous labels 0..{k - 1}; missing {missing}")
    return y
