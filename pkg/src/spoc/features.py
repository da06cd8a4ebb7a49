"""Feature-map container and the binary feature-file format.

A feature map holds the activations of one image as a C x H x W float32
tensor (channel-outermost, row-major) together with the receptive-field
geometry needed to map cells back to input pixels.

File layout (all integers little-endian u32):

    magic "SPOCFEAT" | version=1 | C | H | W | stride | offset |
    input_h | input_w | id_len | image_id bytes (UTF-8) |
    C*H*W little-endian float32

A manifest is a JSON array of ``{"image_id": ..., "path": ...}`` records;
relative paths are resolved against the manifest's directory.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    InvalidGeometry,
    IoFailure,
    MalformedHeader,
    NonFiniteValue,
    OutOfBounds,
    ShapeMismatch,
)

MAGIC = b"SPOCFEAT"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<8sIIIIIIIII")


@dataclass(frozen=True)
class ReceptiveFieldGeometry:
    """Maps feature-cell indices to input-pixel coordinates.

    ``offset`` is the input-pixel center of cell (1, 1); consecutive cells
    are ``stride`` pixels apart.  Cropped views may shift rows and columns
    independently, in which case ``offset_y`` differs from ``offset`` (which
    then applies to the x axis only).  The on-disk format stores a single
    offset, so only symmetric geometries are serializable.
    """

    stride: int
    offset: int
    input_height: int
    input_width: int
    offset_y: int | None = None

    def __post_init__(self):
        if self.stride < 1:
            raise InvalidGeometry(f"stride must be positive, got {self.stride}")
        if self.input_height < 1 or self.input_width < 1:
            raise InvalidGeometry("input dimensions must be positive")
        if self.offset_y is None:
            object.__setattr__(self, "offset_y", self.offset)

    @property
    def offset_x(self):
        return self.offset

    def cell_center(self, x, y):
        """Input-pixel center of cell (x, y), clamped to the image."""
        px = self.offset_x + (x - 1) * self.stride
        py = self.offset_y + (y - 1) * self.stride
        px = min(max(px, 0), self.input_width - 1)
        py = min(max(py, 0), self.input_height - 1)
        return px, py


@dataclass(frozen=True)
class LocalFeature:
    """One cell of a feature map: its C-dim vector and 1-based coordinates."""

    vector: np.ndarray
    x: int
    y: int


@dataclass(frozen=True)
class FeatureMap:
    """Immutable C x H x W activation tensor plus geometry."""

    image_id: str
    data: np.ndarray
    geometry: ReceptiveFieldGeometry

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ShapeMismatch(f"data must be C x H x W, got ndim={data.ndim}")
        if min(data.shape) < 1:
            raise ShapeMismatch(f"empty feature map: shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteValue(f"feature map {self.image_id!r} has NaN/Inf")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        g = self.geometry
        _, h, w = data.shape
        # Last cell center may lie at most one stride beyond the image edge.
        if g.offset_x + g.stride * (w - 1) > g.input_width - 1 + g.stride:
            raise InvalidGeometry(
                f"cell grid ({w} cols) extends past input width {g.input_width}"
            )
        if g.offset_y + g.stride * (h - 1) > g.input_height - 1 + g.stride:
            raise InvalidGeometry(
                f"cell grid ({h} rows) extends past input height {g.input_height}"
            )

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    def receptive_field_center(self, x, y):
        """Input-pixel center of cell (x, y); raises OutOfBounds off-grid."""
        if not (1 <= x <= self.width and 1 <= y <= self.height):
            raise OutOfBounds(
                f"cell ({x}, {y}) outside {self.width} x {self.height} grid"
            )
        return self.geometry.cell_center(x, y)

    def local_feature(self, x, y):
        if not (1 <= x <= self.width and 1 <= y <= self.height):
            raise OutOfBounds(
                f"cell ({x}, {y}) outside {self.width} x {self.height} grid"
            )
        return LocalFeature(vector=self.data[:, y - 1, x - 1], x=x, y=y)

    def features_matrix(self):
        """All cells as an (H*W, C) float32 matrix in raster (y, x) order."""
        c = self.channels
        return self.data.reshape(c, -1).T


def write_feature_file(fmap: FeatureMap, path) -> None:
    """Serialize a feature map; byte-identical for identical maps."""
    g = fmap.geometry
    if g.offset_x != g.offset_y:
        raise InvalidGeometry(
            "asymmetric crop views cannot be serialized (single-offset format)"
        )
    for field, value in (
        ("offset", g.offset_x),
        ("stride", g.stride),
        ("input_height", g.input_height),
        ("input_width", g.input_width),
    ):
        if not 0 <= value <= 0xFFFFFFFF:
            raise InvalidGeometry(f"{field}={value} not representable as u32")
    id_bytes = fmap.image_id.encode("utf-8")
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        fmap.channels,
        fmap.height,
        fmap.width,
        g.stride,
        g.offset_x,
        g.input_height,
        g.input_width,
        len(id_bytes),
    )
    payload = np.ascontiguousarray(fmap.data, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(id_bytes)
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_feature_file(path) -> FeatureMap:
    """Read a feature file written by :func:`write_feature_file`."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise MalformedHeader(f"{path}: truncated header")
    (magic, version, c, h, w, stride, offset, input_h, input_w, id_len) = (
        _HEADER.unpack_from(raw)
    )
    if magic != MAGIC:
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise MalformedHeader(f"{path}: unsupported version {version}")
    id_end = _HEADER.size + id_len
    if len(raw) < id_end:
        raise MalformedHeader(f"{path}: truncated image id")
    image_id = raw[_HEADER.size:id_end].decode("utf-8")
    payload = raw[id_end:]
    expected = c * h * w * 4
    if len(payload) != expected:
        raise ShapeMismatch(
            f"{path}: payload holds {len(payload) // 4} floats, "
            f"expected {c * h * w}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{path}: payload contains NaN/Inf")
    geometry = ReceptiveFieldGeometry(
        stride=stride,
        offset=offset,
        input_height=input_h,
        input_width=input_w,
    )
    return FeatureMap(image_id=image_id, data=data, geometry=geometry)


def write_manifest(entries, path) -> None:
    """Write a manifest of (image_id, feature-file path) pairs."""
    records = [
        {"image_id": image_id, "path": str(file_path)}
        for image_id, file_path in entries
    ]
    Path(path).write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")


def read_manifest(path):
    """Read a manifest; relative paths resolve against its directory."""
    path = Path(path)
    try:
        records = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedHeader(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(records, list):
        raise MalformedHeader(f"{path}: manifest must be a JSON array")
    entries = []
    for record in records:
        if not isinstance(record, dict) or "image_id" not in record or "path" not in record:
            raise MalformedHeader(f"{path}: bad manifest record {record!r}")
        file_path = Path(record["path"])
        if not file_path.is_absolute():
            file_path = path.parent / file_path
        entries.append((record["image_id"], file_path))
    return entries


def load_feature_maps(manifest_path):
    """Yield feature maps listed in a manifest, in manifest order."""
    for _, file_path in read_manifest(manifest_path):
        yield read_feature_file(file_path)
