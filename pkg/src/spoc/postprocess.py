"""Descriptor post-processing: l2 normalization, PCA rotation/compression
with optional whitening, and signed power normalization.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import InsufficientData, RankDeficient, ZeroVector
from .validation import as_matrix, check_dim, check_fitted

SINGULAR_FLOOR_RATIO = 1e-10


def l2_normalize(v) -> np.ndarray:
    """v / ||v||_2; raises ZeroVector on zero input."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ZeroVector("cannot l2-normalize a zero vector")
    return v / norm


def l2_normalize_rows(X) -> np.ndarray:
    """Row-wise l2 normalization; zero rows are left as zeros."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return X / safe


def power_normalize(v, alpha=0.5) -> np.ndarray:
    """Signed power transform sign(v) * |v|^alpha, 0 < alpha <= 1."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.abs(v) ** alpha


class PcaWhitening(BaseEstimator, TransformerMixin):
    """PCA rotation/compression with optional per-component whitening.

    Rows of ``components_`` are the top principal directions of the
    centered training data, sign-fixed so each row's largest-magnitude
    entry is positive.  ``singular_values_`` hold the per-direction
    standard deviations (singular values of the centered matrix scaled by
    1/sqrt(n-1)), so whitened training data has unit variance per
    coordinate.  The uniform scale cancels under the final l2
    normalization of the descriptor pipelines.

    ``n_components=None`` keeps every direction above the rank floor.
    With ``center=False`` the training mean is treated as zero, matching
    the plain rotate-and-scale transform with no mean subtraction.
    """

    def __init__(self, n_components=None, whiten=True, center=True):
        self.n_components = n_components
        self.whiten = whiten
        self.center = center

    def fit(self, X, y=None):
        X = as_matrix(X, "descriptors")
        n, d = X.shape
        if self.n_components is not None:
            if self.n_components < 1:
                raise ValueError("n_components must be >= 1")
            if self.n_components > d:
                raise RankDeficient(
                    f"requested {self.n_components} components from {d}-dim data"
                )
            if n <= self.n_components:
                raise InsufficientData(
                    f"need more than {self.n_components} samples, got {n}"
                )
        if self.center:
            mean = X.mean(axis=0)
        else:
            mean = np.zeros(d, dtype=np.float64)
        _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
        if s.size == 0 or s[0] == 0.0:
            raise RankDeficient("data matrix has rank zero")
        usable = int(np.sum(s >= SINGULAR_FLOOR_RATIO * s[0]))
        n_out = self.n_components if self.n_components is not None else usable
        if n_out > usable:
            raise RankDeficient(
                f"requested {n_out} components but only {usable} have "
                f"singular values above the floor"
            )
        components = vt[:n_out].copy()
        # Deterministic sign: largest-magnitude entry of each row positive.
        lead = np.argmax(np.abs(components), axis=1)
        flip = components[np.arange(n_out), lead] < 0
        components[flip] *= -1.0
        denom = max(n - 1, 1)
        self.mean_ = mean
        self.components_ = components
        self.singular_values_ = s[:n_out] / np.sqrt(denom)
        self.n_components_ = n_out
        self.explained_variance_ratio_ = (s[:n_out] ** 2) / np.sum(s**2)
        return self

    def transform(self, X):
        """Project (and optionally whiten); accepts a vector or a matrix."""
        check_fitted(self, "components_")
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = as_matrix(X, "descriptors")
        check_dim(X, self.components_.shape[1], "descriptors")
        out = (X - self.mean_) @ self.components_.T
        if self.whiten:
            out = out / self.singular_values_
        return out[0] if single else out
