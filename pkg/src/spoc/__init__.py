"""Compact global image descriptors from deep convolutional feature maps.

Sum-pooled convolutional (SPoC) descriptors with an optional Gaussian
center prior, competing aggregation schemes (max pooling, Fisher vectors,
VLAD, triangulation embedding), PCA+whitening post-processing, exact
cosine retrieval, and the matching evaluation protocols.
"""

from .codebooks import DiagonalGaussianMixture, KMeansCodebook
from .encoders import (
    FisherEncoder,
    TriangulationEncoder,
    VladEncoder,
    fisher_embed,
    triang_embed,
    vlad_embed,
)
from .evaluation import (
    QueryTruth,
    RatioCurve,
    average_precision,
    distance_ratio_curve,
    load_ground_truth,
    mean_average_precision,
    select_top_norm_features,
    ukb_score,
)
from .features import (
    FeatureMap,
    LocalFeature,
    ReceptiveFieldGeometry,
    load_feature_maps,
    read_feature_file,
    read_manifest,
    write_feature_file,
    write_manifest,
)
from .pipelines import METHODS, DescriptorPipeline
from .pooling import CenterPriorConfig, gaussian_weights, max_pool, sum_pool
from .postprocess import PcaWhitening, l2_normalize, power_normalize
from .retrieval import (
    DescriptorIndex,
    QueryBox,
    crop_filter_features,
    similarity_heatmap,
)

__version__ = "0.1.0"

__all__ = [
    "CenterPriorConfig",
    "DescriptorIndex",
    "DescriptorPipeline",
    "DiagonalGaussianMixture",
    "FeatureMap",
    "FisherEncoder",
    "KMeansCodebook",
    "LocalFeature",
    "METHODS",
    "PcaWhitening",
    "QueryBox",
    "QueryTruth",
    "RatioCurve",
    "ReceptiveFieldGeometry",
    "TriangulationEncoder",
    "VladEncoder",
    "average_precision",
    "crop_filter_features",
    "distance_ratio_curve",
    "fisher_embed",
    "gaussian_weights",
    "l2_normalize",
    "load_feature_maps",
    "load_ground_truth",
    "max_pool",
    "mean_average_precision",
    "power_normalize",
    "read_feature_file",
    "read_manifest",
    "select_top_norm_features",
    "similarity_heatmap",
    "sum_pool",
    "triang_embed",
    "ukb_score",
    "vlad_embed",
    "write_feature_file",
    "write_manifest",
]
