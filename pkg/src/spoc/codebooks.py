"""Codebook learning: Lloyd k-means with k-means++ seeding, and a diagonal
Gaussian mixture fitted by EM.

Both fits are single-threaded and bit-deterministic for a fixed seed; the
reduction order never depends on hashing or thread scheduling.
"""

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator

from .errors import DegenerateComponent, InsufficientData
from .validation import as_matrix, check_dim, check_fitted

_LOG_2PI = float(np.log(2.0 * np.pi))


def _kmeans_plusplus(X, n_clusters, rng):
    """Classic k-means++ seeding; returns (K, d) initial centers."""
    n = X.shape[0]
    centers = np.empty((n_clusters, X.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = X[first]
    closest = np.sum((X - centers[0]) ** 2, axis=1)
    for k in range(1, n_clusters):
        total = closest.sum()
        if total <= 0.0:
            raise InsufficientData(
                f"fewer than {n_clusters} distinct points available for seeding"
            )
        probs = closest / total
        idx = int(rng.choice(n, p=probs))
        centers[k] = X[idx]
        np.minimum(closest, np.sum((X - centers[k]) ** 2, axis=1), out=closest)
    return centers


def nearest_centroid(X, centroids):
    """Index of the nearest centroid per row; ties go to the lowest index."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    d2 = (
        np.sum(X * X, axis=1)[:, np.newaxis]
        - 2.0 * X @ centroids.T
        + np.sum(centroids * centroids, axis=1)[np.newaxis, :]
    )
    return np.argmin(d2, axis=1)


class KMeansCodebook(BaseEstimator):
    """Lloyd's k-means from k-means++ seeding with a fixed seed.

    Iterations stop when cluster assignments stabilize or after
    ``max_iter`` rounds.  Empty clusters are re-seeded with the point
    farthest from its current centroid (deterministic tie-break).
    """

    def __init__(self, n_clusters=16, seed=0, max_iter=100):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter

    def fit(self, X):
        X = as_matrix(X, "features")
        n, d = X.shape
        k = self.n_clusters
        if k < 1:
            raise ValueError(f"n_clusters must be >= 1, got {k}")
        if n < k:
            raise InsufficientData(f"{n} features < {k} clusters")
        rng = np.random.default_rng(self.seed)
        centers = _kmeans_plusplus(X, k, rng)
        labels = nearest_centroid(X, centers)
        for it in range(self.max_iter):
            for j in range(k):
                members = labels == j
                if np.any(members):
                    centers[j] = X[members].mean(axis=0)
                else:
                    # Steal the point farthest from its own centroid.
                    dist = np.sum((X - centers[labels]) ** 2, axis=1)
                    far = int(np.argmax(dist))
                    centers[j] = X[far]
                    labels[far] = j
            new_labels = nearest_centroid(X, centers)
            converged = np.array_equal(new_labels, labels)
            labels = new_labels
            if converged:
                break
        self.cluster_centers_ = centers
        self.labels_ = labels
        self.n_iter_ = it + 1
        return self

    def predict(self, X):
        check_fitted(self, "cluster_centers_")
        X = as_matrix(X, "features")
        check_dim(X, self.cluster_centers_.shape[1], "features")
        return nearest_centroid(X, self.cluster_centers_)


class DiagonalGaussianMixture(BaseEstimator):
    """Diagonal-covariance GMM fitted by EM, initialized from k-means.

    The per-iteration total log-likelihood is recorded in
    ``log_likelihoods_`` and must be non-decreasing (1e-8 slack); EM stops
    at relative improvement below ``tol`` or after ``max_iter`` rounds.
    """

    def __init__(self, n_components=16, seed=0, max_iter=200, tol=1e-6,
                 variance_floor=1e-6, weight_floor=1e-8):
        self.n_components = n_components
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol
        self.variance_floor = variance_floor
        self.weight_floor = weight_floor

    def _log_prob(self, X):
        """(n, K) log of w_k * N(x | mu_k, diag(var_k))."""
        inv_var = 1.0 / self.variances_
        log_det = np.sum(np.log(self.variances_), axis=1)
        quad = (
            np.sum(self.means_**2 * inv_var, axis=1)[np.newaxis, :]
            - 2.0 * X @ (self.means_ * inv_var).T
            + X**2 @ inv_var.T
        )
        d = X.shape[1]
        return (
            np.log(self.weights_)[np.newaxis, :]
            - 0.5 * (d * _LOG_2PI + log_det[np.newaxis, :] + quad)
        )

    def fit(self, X):
        X = as_matrix(X, "features")
        n, d = X.shape
        k = self.n_components
        if n < 2 * k:
            raise InsufficientData(f"{n} features < 2 * {k} components")
        km = KMeansCodebook(n_clusters=k, seed=self.seed).fit(X)
        self.means_ = km.cluster_centers_.copy()
        counts = np.bincount(km.labels_, minlength=k).astype(np.float64)
        self.weights_ = np.maximum(counts, 1.0) / np.maximum(counts, 1.0).sum()
        global_var = np.maximum(X.var(axis=0), self.variance_floor)
        variances = np.tile(global_var, (k, 1))
        for j in range(k):
            members = km.labels_ == j
            if members.sum() > 1:
                variances[j] = np.maximum(
                    X[members].var(axis=0), self.variance_floor
                )
        self.variances_ = variances

        history = []
        for it in range(self.max_iter):
            log_joint = self._log_prob(X)
            log_norm = logsumexp(log_joint, axis=1)
            ll = float(log_norm.sum())
            if history:
                assert ll >= history[-1] - 1e-8, (
                    f"EM log-likelihood decreased: {history[-1]} -> {ll}"
                )
            history.append(ll)
            if len(history) > 1:
                prev = history[-2]
                if ll - prev < self.tol * max(abs(prev), 1e-12):
                    break
            resp = np.exp(log_joint - log_norm[:, np.newaxis])
            nk = resp.sum(axis=0)
            weights = nk / n
            if np.any(weights < self.weight_floor):
                raise DegenerateComponent(
                    f"component weight underflow: min {weights.min():.3e}"
                )
            means = (resp.T @ X) / nk[:, np.newaxis]
            sq = (resp.T @ (X**2)) / nk[:, np.newaxis]
            self.weights_ = weights
            self.means_ = means
            self.variances_ = np.maximum(
                sq - means**2, self.variance_floor
            )
        self.log_likelihoods_ = history
        self.n_iter_ = len(history)
        return self

    def predict_proba(self, X):
        """Posterior soft assignments gamma_k(x); rows sum to 1."""
        check_fitted(self, "means_")
        X = as_matrix(X, "features")
        check_dim(X, self.means_.shape[1], "features")
        log_joint = self._log_prob(X)
        log_norm = logsumexp(log_joint, axis=1)
        return np.exp(log_joint - log_norm[:, np.newaxis])
