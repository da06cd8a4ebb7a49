"""End-to-end descriptor pipelines.

Every method aggregates a feature map to a pre-descriptor vector,
l2-normalizes it, projects it with PCA learned on hold-out data, and
l2-normalizes again (so descriptors are unit-norm and cosine ranking
equals Euclidean ranking):

    spoc           sum pool with Gaussian center prior -> l2 -> PCA+whitening -> l2
    spoc-nocenter  sum pool                            -> l2 -> PCA+whitening -> l2
    max            max pool                  -> l2 -> PCA (no whitening) -> l2
    fv/vlad/temb   embed+sum -> power norm   -> l2 -> PCA (no whitening) -> l2

Whitening helps sum pooling and hurts the other aggregations, hence the
per-method default; ``whiten`` overrides it.
"""

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .encoders import FisherEncoder, TriangulationEncoder, VladEncoder
from .errors import DataError
from .features import FeatureMap
from .model_io import load_encoder, load_pca, save_encoder, save_pca
from .pooling import CenterPriorConfig, gaussian_weights, max_pool, sum_pool
from .postprocess import PcaWhitening, l2_normalize, power_normalize
from .retrieval import QueryBox, crop_filter_features
from .validation import check_fitted

METHODS = ("spoc", "spoc-nocenter", "max", "fv", "vlad", "temb")
_DEFAULT_CODEBOOK = {"fv": 16, "vlad": 16, "temb": 1}

PIPELINE_FILE = "pipeline.json"
PCA_FILE = "pca.spocm"
ENCODER_FILE = "encoder.spocm"


class DescriptorPipeline(BaseEstimator):
    """Fits and applies one descriptor method end to end.

    ``fit`` takes hold-out feature maps: it learns any embedding models on
    their local features, aggregates each map, and learns the final PCA on
    the aggregated vectors.  ``transform`` maps feature maps to unit-norm
    descriptors of ``n_components`` dims.
    """

    def __init__(self, method="spoc", n_components=256, sigma=None, alpha=0.5,
                 codebook_size=None, fv_reduce_dim=32, whiten=None,
                 center_pca=True, recompute_prior_on_crop=True, seed=0):
        self.method = method
        self.n_components = n_components
        self.sigma = sigma
        self.alpha = alpha
        self.codebook_size = codebook_size
        self.fv_reduce_dim = fv_reduce_dim
        self.whiten = whiten
        self.center_pca = center_pca
        self.recompute_prior_on_crop = recompute_prior_on_crop
        self.seed = seed

    # -- configuration ------------------------------------------------------

    def _check_method(self):
        if self.method not in METHODS:
            raise ValueError(
                f"unknown method {self.method!r}; expected one of {METHODS}"
            )

    @property
    def effective_whiten(self):
        if self.whiten is not None:
            return bool(self.whiten)
        return self.method in ("spoc", "spoc-nocenter")

    @property
    def uses_embedding(self):
        return self.method in ("fv", "vlad", "temb")

    def _make_encoder(self):
        size = self.codebook_size or _DEFAULT_CODEBOOK[self.method]
        if self.method == "fv":
            return FisherEncoder(
                n_components=size, reduce_dim=self.fv_reduce_dim, seed=self.seed
            )
        if self.method == "vlad":
            return VladEncoder(n_clusters=size, seed=self.seed)
        return TriangulationEncoder(n_clusters=size, seed=self.seed)

    # -- fitting ------------------------------------------------------------

    def fit(self, maps, y=None):
        self._check_method()
        maps = list(maps)
        if not maps:
            raise DataError("no feature maps to fit on")
        if self.uses_embedding:
            features = np.concatenate(
                [m.features_matrix().astype(np.float64) for m in maps]
            )
            self.encoder_ = self._make_encoder().fit(features)
        else:
            self.encoder_ = None
        aggregated = np.stack([self._pre_descriptor(m) for m in maps])
        self.pca_ = PcaWhitening(
            n_components=self.n_components,
            whiten=self.effective_whiten,
            center=self.center_pca,
        ).fit(aggregated)
        return self

    # -- application --------------------------------------------------------

    def _pre_descriptor(self, fmap: FeatureMap, weights=None):
        """Aggregate and l2-normalize one map (stage before PCA)."""
        if self.method == "spoc":
            pooled = sum_pool(
                fmap, CenterPriorConfig(enabled=True, sigma=self.sigma),
                weights=weights,
            )
        elif self.method == "spoc-nocenter":
            pooled = sum_pool(fmap)
        elif self.method == "max":
            pooled = max_pool(fmap)
        else:
            pooled = power_normalize(self.encoder_.aggregate(fmap), self.alpha)
        return l2_normalize(pooled)

    def describe(self, fmap: FeatureMap, box: QueryBox | None = None):
        """Unit-norm descriptor for one map, optionally crop-filtered.

        With the center prior enabled, cropping recomputes the Gaussian
        weights on the cropped grid unless ``recompute_prior_on_crop`` is
        False, in which case the full-grid weights are sliced to the
        retained cells.
        """
        check_fitted(self, "pca_")
        weights = None
        if box is not None:
            if self.method == "spoc" and not self.recompute_prior_on_crop:
                full = gaussian_weights(fmap.height, fmap.width, self.sigma)
                cropped = crop_filter_features(fmap, box)
                g, cg = fmap.geometry, cropped.geometry
                x0 = (cg.offset_x - g.offset_x) // g.stride
                y0 = (cg.offset_y - g.offset_y) // g.stride
                weights = full[y0:y0 + cropped.height, x0:x0 + cropped.width]
                fmap = cropped
            else:
                fmap = crop_filter_features(fmap, box)
        pre = self._pre_descriptor(fmap, weights=weights)
        return l2_normalize(self.pca_.transform(pre))

    def transform(self, maps):
        """Descriptors for a sequence of maps, one row per map."""
        return np.stack([self.describe(m) for m in maps])

    # -- persistence --------------------------------------------------------

    def save(self, directory):
        """Write pipeline params + fitted models into a directory."""
        check_fitted(self, "pca_")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        params = {"params": self.get_params(), "method": self.method}
        (directory / PIPELINE_FILE).write_text(
            json.dumps(params, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        save_pca(self.pca_, directory / PCA_FILE)
        if self.encoder_ is not None:
            save_encoder(self.encoder_, directory / ENCODER_FILE)

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        spec_path = directory / PIPELINE_FILE
        if not spec_path.is_file():
            raise DataError(f"no fitted pipeline at {directory}")
        params = json.loads(spec_path.read_text(encoding="utf-8"))["params"]
        pipeline = cls(**params)
        pipeline.pca_ = load_pca(directory / PCA_FILE)
        encoder_path = directory / ENCODER_FILE
        pipeline.encoder_ = (
            load_encoder(encoder_path) if encoder_path.is_file() else None
        )
        return pipeline
