"""Small input-validation helpers shared by the estimator classes."""

from __future__ import annotations

import numpy as np
from scipy import sparse
from sklearn.exceptions import NotFittedError


def check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted (missing {attribute})"
        )


def check_fraction(value: float, name: str, inclusive: bool = True) -> float:
    value = float(value)
    low_ok = value >= 0.0 if inclusive else value > 0.0
    high_ok = value <= 1.0 if inclusive else value < 1.0
    if not (low_ok and high_ok):
        bounds = "[0, 1]" if inclusive else "(0, 1)"
        raise ValueError(f"{name} must be in {bounds}, got {value}")
    return value


def as_feature_matrix(X):
    """Accept a CSR matrix or anything ndarray-like; reject bad shapes."""
    if sparse.issparse(X):
        return X.tocsr()
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d feature matrix, got shape {arr.shape}")
    return arr


def as_binary_labels(y) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError("labels must be 1-d")
    uniques = set(np.unique(arr).tolist())
    if not uniques <= {0, 1}:
        raise ValueError(f"labels must be 0/1, got values {sorted(uniques)}")
    return arr.astype(np.int64)
