"""Per-feature embeddings (VLAD, Fisher vector, triangulation) and their
summation-aggregation over a feature map.

Aggregation loops over cells in raster order so the result is bit-identical
to a brute-force sum of per-feature embeddings.
"""

import warnings

import numpy as np
from sklearn.base import BaseEstimator

from .codebooks import DiagonalGaussianMixture, KMeansCodebook, nearest_centroid
from .errors import ZeroResidualWarning
from .features import FeatureMap
from .postprocess import PcaWhitening
from .validation import as_vector, check_dim, check_fitted

ZERO_RESIDUAL_EPS = 1e-12


def vlad_embed(x, centroids) -> np.ndarray:
    """K*d vector: zero except block k = x - c_k for the nearest centroid.

    Equidistant features go to the lowest centroid index.
    """
    x = as_vector(x, "feature")
    centroids = np.asarray(centroids, dtype=np.float64)
    check_dim(x, centroids.shape[1], "feature")
    k, d = centroids.shape
    nearest = int(nearest_centroid(x, centroids)[0])
    out = np.zeros(k * d, dtype=np.float64)
    out[nearest * d:(nearest + 1) * d] = x - centroids[nearest]
    return out


def fisher_embed(x, gmm: DiagonalGaussianMixture) -> np.ndarray:
    """Fisher-vector gradient embedding, 2*K*d dims.

    Layout: K first-order blocks, then K second-order blocks, where

        first_k  = gamma_k * (x - mu_k) / sigma_k / sqrt(w_k)
        second_k = gamma_k * ((x - mu_k)^2 / sigma_k^2 - 1) / sqrt(2 w_k)
    """
    x = as_vector(x, "feature")
    check_dim(x, gmm.means_.shape[1], "feature")
    gamma = gmm.predict_proba(x)[0]
    sigma = np.sqrt(gmm.variances_)
    diff = (x[np.newaxis, :] - gmm.means_) / sigma
    first = gamma[:, np.newaxis] * diff / np.sqrt(gmm.weights_)[:, np.newaxis]
    second = (
        gamma[:, np.newaxis]
        * (diff**2 - 1.0)
        / np.sqrt(2.0 * gmm.weights_)[:, np.newaxis]
    )
    return np.concatenate([first.ravel(), second.ravel()])


def triang_embed(x, centroids) -> np.ndarray:
    """Concatenated unit-normalized residuals to every centroid.

    A residual with norm below 1e-12 yields a zero block and a
    ZeroResidualWarning instead of a division blow-up.
    """
    x = as_vector(x, "feature")
    centroids = np.asarray(centroids, dtype=np.float64)
    check_dim(x, centroids.shape[1], "feature")
    residuals = x[np.newaxis, :] - centroids
    norms = np.linalg.norm(residuals, axis=1)
    out = residuals.copy()
    degenerate = norms < ZERO_RESIDUAL_EPS
    if np.any(degenerate):
        warnings.warn(
            f"feature coincides with centroid(s) {np.flatnonzero(degenerate).tolist()}; "
            "block(s) zeroed",
            ZeroResidualWarning,
            stacklevel=2,
        )
        out[degenerate] = 0.0
        norms = np.where(degenerate, 1.0, norms)
    out /= norms[:, np.newaxis]
    return out.ravel()


def _map_cells(fmap: FeatureMap):
    """Cells as float64 rows in raster (y, x) order."""
    return fmap.features_matrix().astype(np.float64)


class VladEncoder(BaseEstimator):
    """VLAD: hard-assignment residual embedding over a k-means codebook."""

    def __init__(self, n_clusters=16, seed=0):
        self.n_clusters = n_clusters
        self.seed = seed

    def fit(self, X, y=None):
        self.codebook_ = KMeansCodebook(
            n_clusters=self.n_clusters, seed=self.seed
        ).fit(X)
        return self

    @property
    def centroids_(self):
        check_fitted(self, "codebook_")
        return self.codebook_.cluster_centers_

    @property
    def output_dim_(self):
        return self.centroids_.size

    def embed(self, x):
        return vlad_embed(x, self.centroids_)

    def aggregate(self, fmap: FeatureMap) -> np.ndarray:
        """Sum of per-cell embeddings, bit-equal to the brute-force loop."""
        check_fitted(self, "codebook_")
        cells = _map_cells(fmap)
        check_dim(cells, self.centroids_.shape[1], "feature map")
        k, d = self.centroids_.shape
        assign = nearest_centroid(cells, self.centroids_)
        out = np.zeros(k * d, dtype=np.float64)
        for i in range(cells.shape[0]):
            j = assign[i]
            out[j * d:(j + 1) * d] += cells[i] - self.centroids_[j]
        return out


class FisherEncoder(BaseEstimator):
    """Fisher-vector embedding over a diagonal GMM.

    Local features are PCA-compressed to ``reduce_dim`` dimensions before
    the GMM is fitted; reduction is skipped when the features are already
    at or below that size.
    """

    def __init__(self, n_components=16, reduce_dim=32, seed=0):
        self.n_components = n_components
        self.reduce_dim = reduce_dim
        self.seed = seed

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if self.reduce_dim is not None and self.reduce_dim < X.shape[1]:
            self.reducer_ = PcaWhitening(
                n_components=self.reduce_dim, whiten=False
            ).fit(X)
            X = self.reducer_.transform(X)
        else:
            self.reducer_ = None
        self.gmm_ = DiagonalGaussianMixture(
            n_components=self.n_components, seed=self.seed
        ).fit(X)
        return self

    @property
    def output_dim_(self):
        check_fitted(self, "gmm_")
        return 2 * self.gmm_.means_.size

    def _reduce(self, X):
        return X if self.reducer_ is None else self.reducer_.transform(X)

    def embed(self, x):
        """Embed one raw local feature (reduction applied first)."""
        check_fitted(self, "gmm_")
        return fisher_embed(self._reduce(np.asarray(x, dtype=np.float64)), self.gmm_)

    def aggregate(self, fmap: FeatureMap) -> np.ndarray:
        check_fitted(self, "gmm_")
        cells = _map_cells(fmap)
        out = np.zeros(2 * self.gmm_.means_.size, dtype=np.float64)
        for i in range(cells.shape[0]):
            out += fisher_embed(self._reduce(cells[i]), self.gmm_)
        return out


class TriangulationEncoder(BaseEstimator):
    """Triangulation embedding with centering/whitening statistics.

    Each embedded feature is centered and whitened by statistics learned on
    the training features, then l2-normalized, before summation.  The two
    tweaks that help shallow features are available but off by default:
    ``sqrt_features`` applies a signed square root to the raw features and
    ``drop_high_energy`` removes that many leading (highest-variance)
    whitened components.
    """

    def __init__(self, n_clusters=1, seed=0, sqrt_features=False,
                 drop_high_energy=0):
        self.n_clusters = n_clusters
        self.seed = seed
        self.sqrt_features = sqrt_features
        self.drop_high_energy = drop_high_energy

    def _pre(self, x):
        if self.sqrt_features:
            return np.sign(x) * np.sqrt(np.abs(x))
        return x

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        Xp = self._pre(X)
        self.codebook_ = KMeansCodebook(
            n_clusters=self.n_clusters, seed=self.seed
        ).fit(Xp)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ZeroResidualWarning)
            embedded = np.stack(
                [triang_embed(row, self.centroids_) for row in Xp]
            )
        self.stats_ = PcaWhitening(n_components=None, whiten=True).fit(embedded)
        return self

    @property
    def centroids_(self):
        check_fitted(self, "codebook_")
        return self.codebook_.cluster_centers_

    @property
    def output_dim_(self):
        check_fitted(self, "stats_")
        return self.stats_.n_components_ - self.drop_high_energy

    def embed(self, x):
        """Raw triangulation embedding of one feature (no statistics)."""
        return triang_embed(self._pre(np.asarray(x, dtype=np.float64)),
                            self.centroids_)

    def postembed(self, phi):
        """Center, whiten, optionally drop leading components, l2-normalize."""
        check_fitted(self, "stats_")
        z = self.stats_.transform(phi)
        if self.drop_high_energy:
            z = z[self.drop_high_energy:]
        norm = np.linalg.norm(z)
        if norm > 0.0:
            z = z / norm
        return z

    def aggregate(self, fmap: FeatureMap) -> np.ndarray:
        check_fitted(self, "stats_")
        cells = _map_cells(fmap)
        out = np.zeros(self.output_dim_, dtype=np.float64)
        for i in range(cells.shape[0]):
            out += self.postembed(self.embed(cells[i]))
        return out
