"""Retrieval metrics and diagnostic analyses: average precision with junk
handling, mAP, the UKB top-4 score, neighbor-distance ratio curves, and
norm-based feature subsampling.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateId,
    EmptyRelevantSet,
    InsufficientReference,
    MalformedHeader,
    MissingTruth,
    ShortRanking,
)
from .features import FeatureMap, LocalFeature


@dataclass(frozen=True)
class QueryTruth:
    """Relevant and junk id sets for one query; the two are disjoint."""

    relevant: frozenset
    junk: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "relevant", frozenset(self.relevant))
        object.__setattr__(self, "junk", frozenset(self.junk))
        overlap = self.relevant & self.junk
        if overlap:
            raise ValueError(f"relevant and junk overlap: {sorted(overlap)}")


def load_ground_truth(path):
    """Read ``{query_id: {"relevant": [...], "junk": [...]}}`` JSON."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise MalformedHeader(f"{path}: ground truth must be a JSON object")
    truth = {}
    for query_id, entry in raw.items():
        truth[query_id] = QueryTruth(
            relevant=frozenset(entry.get("relevant", [])),
            junk=frozenset(entry.get("junk", [])),
        )
    return truth


def average_precision(ranking, truth: QueryTruth) -> float:
    """Precision-at-hit AP with junk ids removed from the ranking.

    AP = (1/R) * sum over hits of precision at that hit, R = |relevant|.
    Relevant ids missing from the ranking contribute zero.
    """
    if len(set(ranking)) != len(ranking):
        raise DuplicateId("ranking contains duplicate ids")
    if not truth.relevant:
        raise EmptyRelevantSet("query has no relevant images")
    hits = 0
    rank = 0
    total = 0.0
    for image_id in ranking:
        if image_id in truth.junk:
            continue
        rank += 1
        if image_id in truth.relevant:
            hits += 1
            total += hits / rank
    return total / len(truth.relevant)


def mean_average_precision(results, truth) -> float:
    """Unweighted mean of per-query AP over ``{query_id: ranking}``."""
    if not results:
        raise MissingTruth("no query results")
    aps = []
    for query_id, ranking in results.items():
        if query_id not in truth:
            raise MissingTruth(f"no ground truth for query {query_id!r}")
        aps.append(average_precision(ranking, truth[query_id]))
    return float(np.mean(aps))


def ukb_score(results, truth, include_self=True) -> float:
    """Mean count of same-object images within each query's top four.

    With ``include_self`` (the default) the query counts itself when
    retrieved; otherwise the query id is dropped from both the ranking and
    the same-object set before counting.
    """
    if not results:
        raise MissingTruth("no query results")
    scores = []
    for query_id, ranking in results.items():
        if query_id not in truth:
            raise MissingTruth(f"no ground truth for query {query_id!r}")
        same_object = set(truth[query_id].relevant)
        if include_self:
            same_object.add(query_id)
        else:
            same_object.discard(query_id)
            ranking = [r for r in ranking if r != query_id]
        if len(ranking) < 4:
            raise ShortRanking(
                f"query {query_id!r} has only {len(ranking)} results"
            )
        scores.append(len(same_object.intersection(ranking[:4])))
    return float(np.mean(scores))


@dataclass(frozen=True)
class RatioCurve:
    """Mean distance-to-kth-neighbor over median distance, k = 1..K_max."""

    ks: np.ndarray
    ratios: np.ndarray


def distance_ratio_curve(query_features, reference, k_max) -> RatioCurve:
    """Average d_(k) / median(d) curve over the query features.

    For each query feature, Euclidean distances to every reference feature
    are sorted; the first k_max are divided by the median of all distances
    from that feature, and the per-feature curves are averaged.
    """
    query = np.atleast_2d(np.asarray(query_features, dtype=np.float64))
    reference = np.asarray(reference, dtype=np.float64)
    if reference.shape[0] <= k_max:
        raise InsufficientReference(
            f"{reference.shape[0]} reference features <= k_max {k_max}"
        )
    q2 = np.sum(query**2, axis=1)[:, np.newaxis]
    r2 = np.sum(reference**2, axis=1)[np.newaxis, :]
    d2 = np.maximum(q2 - 2.0 * query @ reference.T + r2, 0.0)
    dist = np.sqrt(d2)
    medians = np.median(dist, axis=1)
    nearest = np.sort(dist, axis=1)[:, :k_max]
    curves = nearest / medians[:, np.newaxis]
    return RatioCurve(
        ks=np.arange(1, k_max + 1), ratios=curves.mean(axis=0)
    )


def select_top_norm_features(fmap: FeatureMap, fraction: float):
    """The ceil(fraction * H * W) cells with the largest l2 norms.

    Ties are broken by (y, x) lexicographic order.  Returns LocalFeature
    records with 1-based coordinates.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    h, w = fmap.height, fmap.width
    count = math.ceil(fraction * h * w)
    cells = fmap.features_matrix().astype(np.float64)
    norms = np.linalg.norm(cells, axis=1)
    ys, xs = np.divmod(np.arange(h * w), w)
    order = np.lexsort((xs, ys, -norms))
    picked = order[:count]
    return [
        LocalFeature(vector=fmap.data[:, ys[i], xs[i]], x=int(xs[i]) + 1,
                     y=int(ys[i]) + 1)
        for i in picked
    ]
