"""Spatial aggregation of feature maps: sum pooling (optionally with a
Gaussian center prior) and max pooling.

Weights are computed in float64 and the weighted sum accumulates in float64;
a 37 x 37 x 512 sum loses visible precision in float32.
"""

from dataclasses import dataclass

import numpy as np

from .features import FeatureMap


@dataclass(frozen=True)
class CenterPriorConfig:
    """Gaussian spatial weighting favoring the grid center.

    ``sigma`` is in feature-cell units.  When ``sigma`` is None the default
    rule applies: one third of the distance from the center to the closest
    grid boundary, i.e. min(H, W) / 6.
    """

    enabled: bool = True
    sigma: float | None = None

    def __post_init__(self):
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def gaussian_weights(height, width, sigma=None):
    """H x W center-prior weights.

    Cell (x, y) uses 1-based indices and real-valued grid center (W/2, H/2):

        w(x, y) = exp(-((y - H/2)^2 + (x - W/2)^2) / (2 sigma^2))
    """
    if height < 1 or width < 1:
        raise ValueError("grid dimensions must be positive")
    if sigma is None:
        sigma = min(height, width) / 6.0
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    ys = np.arange(1, height + 1, dtype=np.float64) - height / 2.0
    xs = np.arange(1, width + 1, dtype=np.float64) - width / 2.0
    sq = ys[:, np.newaxis] ** 2 + xs[np.newaxis, :] ** 2
    return np.exp(-sq / (2.0 * sigma * sigma))


def sum_pool(fmap: FeatureMap, prior: CenterPriorConfig | None = None,
             weights=None) -> np.ndarray:
    """Weighted per-channel sum over all cells, as a C-dim float64 vector.

    With no prior (or ``prior.enabled`` False) all weights are 1.  An
    explicit ``weights`` matrix overrides the prior; crop-aware callers use
    this to keep full-grid weights on a cropped view.
    """
    h, w = fmap.height, fmap.width
    if weights is None:
        if prior is not None and prior.enabled:
            weights = gaussian_weights(h, w, prior.sigma)
        else:
            weights = np.ones((h, w), dtype=np.float64)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (h, w):
            raise ValueError(
                f"weights shape {weights.shape} != grid ({h}, {w})"
            )
    data = fmap.data.astype(np.float64)
    return np.tensordot(data, weights, axes=([1, 2], [0, 1]))


def max_pool(fmap: FeatureMap) -> np.ndarray:
    """Per-channel maximum over all cells, as a C-dim float64 vector."""
    return fmap.data.max(axis=(1, 2)).astype(np.float64)
