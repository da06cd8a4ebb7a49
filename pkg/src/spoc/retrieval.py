"""Descriptor index with exact cosine search, crop-protocol feature
filtering, and query-to-descriptor similarity heatmaps.

The index is an exhaustive scan: dataset sizes in scope are small enough
that exact ranking beats approximate structures.

Index file layout (little-endian): magic "SPOCIDX1", u32 version=1,
u32 N, u32 count, then per image u32 id_len + UTF-8 id bytes, then the
count x N row-major float32 matrix.
"""

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyCrop,
    IoFailure,
    MalformedHeader,
    NotNormalized,
    ShapeMismatch,
)
from .features import FeatureMap
from .postprocess import PcaWhitening
from .validation import check_fitted

INDEX_MAGIC = b"SPOCIDX1"
INDEX_VERSION = 1
NORM_TOLERANCE = 1e-5


@dataclass(frozen=True)
class QueryBox:
    """Inclusive input-pixel bounding box for crop queries."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError(
                f"degenerate box ({self.x_min},{self.y_min},{self.x_max},{self.y_max})"
            )
        if self.x_min < 0 or self.y_min < 0:
            raise ValueError("box coordinates must be non-negative")


class DescriptorIndex:
    """Ordered set of unit-norm descriptors searchable by scalar product."""

    def __init__(self, ids, matrix):
        self.ids = list(ids)
        self.matrix = np.ascontiguousarray(matrix, dtype=np.float32)

    @classmethod
    def build(cls, descriptors):
        """Build from (id, descriptor) pairs, validating every row."""
        ids = []
        seen = set()
        rows = []
        dim = None
        for image_id, vec in descriptors:
            vec = np.asarray(vec, dtype=np.float64)
            if vec.ndim != 1:
                raise DimensionMismatch(f"descriptor for {image_id!r} is not 1-D")
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise DimensionMismatch(
                    f"descriptor for {image_id!r} has dim {vec.shape[0]}, expected {dim}"
                )
            if abs(np.linalg.norm(vec) - 1.0) > NORM_TOLERANCE:
                raise NotNormalized(
                    f"descriptor for {image_id!r} has norm {np.linalg.norm(vec):.6f}"
                )
            if image_id in seen:
                raise DuplicateId(f"duplicate image id {image_id!r}")
            seen.add(image_id)
            ids.append(image_id)
            rows.append(vec.astype(np.float32))
        matrix = (
            np.stack(rows) if rows else np.empty((0, dim or 0), dtype=np.float32)
        )
        return cls(ids, matrix)

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self):
        return self.matrix.shape[1]

    def search(self, query, k=None):
        """Top-k (id, similarity) by descending scalar product.

        Ties keep insertion order; k defaults to the full index.
        """
        query = np.asarray(query, dtype=np.float32)
        if query.ndim != 1 or query.shape[0] != self.dim:
            raise DimensionMismatch(
                f"query has shape {query.shape}, index dim is {self.dim}"
            )
        sims = self.matrix @ query
        order = np.argsort(-sims, kind="stable")
        if k is not None:
            order = order[:k]
        return [(self.ids[i], float(sims[i])) for i in order]

    def descriptor(self, image_id):
        try:
            row = self.ids.index(image_id)
        except ValueError:
            raise KeyError(image_id) from None
        return self.matrix[row].astype(np.float64)

    def save(self, path):
        header = struct.pack(
            "<8sIII", INDEX_MAGIC, INDEX_VERSION, self.dim, len(self.ids)
        )
        try:
            with open(path, "wb") as fh:
                fh.write(header)
                for image_id in self.ids:
                    raw = image_id.encode("utf-8")
                    fh.write(struct.pack("<I", len(raw)))
                    fh.write(raw)
                fh.write(np.ascontiguousarray(self.matrix, dtype="<f4").tobytes())
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path):
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        head = struct.Struct("<8sIII")
        if len(raw) < head.size:
            raise MalformedHeader(f"{path}: truncated header")
        magic, version, dim, count = head.unpack_from(raw)
        if magic != INDEX_MAGIC:
            raise MalformedHeader(f"{path}: bad magic {magic!r}")
        if version != INDEX_VERSION:
            raise MalformedHeader(f"{path}: unsupported version {version}")
        pos = head.size
        ids = []
        for _ in range(count):
            if len(raw) < pos + 4:
                raise MalformedHeader(f"{path}: truncated id table")
            (id_len,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            ids.append(raw[pos:pos + id_len].decode("utf-8"))
            pos += id_len
        expected = count * dim * 4
        if len(raw) - pos != expected:
            raise ShapeMismatch(
                f"{path}: matrix payload is {len(raw) - pos} bytes, expected {expected}"
            )
        matrix = np.frombuffer(raw[pos:], dtype="<f4").reshape(count, dim)
        return cls(ids, matrix)


def crop_filter_features(fmap: FeatureMap, box: QueryBox) -> FeatureMap:
    """Sub-map of cells whose receptive-field centers fall inside the box.

    Box edges are inclusive.  The retained cells always form a rectangular
    sub-grid because centers are monotone in the cell index.  Raises
    EmptyCrop when no center is inside; callers that want a full-image
    fallback must do so explicitly.
    """
    if box.x_max > fmap.geometry.input_width - 1:
        raise ValueError(
            f"box x_max {box.x_max} outside image width {fmap.geometry.input_width}"
        )
    if box.y_max > fmap.geometry.input_height - 1:
        raise ValueError(
            f"box y_max {box.y_max} outside image height {fmap.geometry.input_height}"
        )
    centers_x = np.array(
        [fmap.receptive_field_center(x, 1)[0] for x in range(1, fmap.width + 1)]
    )
    centers_y = np.array(
        [fmap.receptive_field_center(1, y)[1] for y in range(1, fmap.height + 1)]
    )
    keep_x = np.flatnonzero((centers_x >= box.x_min) & (centers_x <= box.x_max))
    keep_y = np.flatnonzero((centers_y >= box.y_min) & (centers_y <= box.y_max))
    if keep_x.size == 0 or keep_y.size == 0:
        raise EmptyCrop(
            f"no receptive-field centers inside "
            f"({box.x_min},{box.y_min},{box.x_max},{box.y_max})"
        )
    g = fmap.geometry
    geometry = replace(
        g,
        offset=g.offset_x + int(keep_x[0]) * g.stride,
        offset_y=g.offset_y + int(keep_y[0]) * g.stride,
    )
    data = fmap.data[:, keep_y[0]:keep_y[-1] + 1, keep_x[0]:keep_x[-1] + 1]
    return FeatureMap(image_id=fmap.image_id, data=data, geometry=geometry)


def similarity_heatmap(query_map: FeatureMap, model: PcaWhitening,
                       target) -> np.ndarray:
    """H x W cosine similarities between projected cells and a descriptor.

    Each cell's raw feature is pushed through the same PCA(+whitening)
    transform that produced the target descriptor; cells whose projection
    is zero score 0.
    """
    check_fitted(model, "components_")
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 1 or target.shape[0] != model.n_components_:
        raise DimensionMismatch(
            f"target has shape {target.shape}, model emits {model.n_components_}"
        )
    target_norm = float(np.linalg.norm(target))
    cells = query_map.features_matrix().astype(np.float64)
    projected = model.transform(cells)
    norms = np.linalg.norm(projected, axis=1)
    sims = np.zeros(cells.shape[0], dtype=np.float64)
    nonzero = (norms > 0.0) & (target_norm > 0.0)
    if np.any(nonzero):
        sims[nonzero] = (
            projected[nonzero] @ target / (norms[nonzero] * target_norm)
        )
    np.clip(sims, -1.0, 1.0, out=sims)
    return sims.reshape(query_map.height, query_map.width)
