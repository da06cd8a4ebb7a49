"""Versioned on-disk format for fitted models.

Each file is a single JSON header line (UTF-8, sorted keys) followed by the
concatenated little-endian float64 payload of the arrays the header
declares.  Writing the same fitted model twice yields identical bytes.
"""

import json

import numpy as np

from .codebooks import DiagonalGaussianMixture, KMeansCodebook
from .encoders import FisherEncoder, TriangulationEncoder, VladEncoder
from .errors import IoFailure, MalformedHeader
from .postprocess import PcaWhitening
from .validation import check_fitted

MODEL_FORMAT = "spoc-model"
MODEL_VERSION = 1
SIGN_CONVENTION = "largest_abs_positive"


def _write(path, meta, arrays):
    header = dict(meta)
    header["format"] = MODEL_FORMAT
    header["version"] = MODEL_VERSION
    header["arrays"] = [
        {"name": name, "shape": list(arr.shape)} for name, arr in arrays
    ]
    line = json.dumps(header, sort_keys=True, separators=(",", ":"))
    try:
        with open(path, "wb") as fh:
            fh.write(line.encode("utf-8"))
            fh.write(b"\n")
            for _, arr in arrays:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    newline = raw.find(b"\n")
    if newline < 0:
        raise MalformedHeader(f"{path}: missing header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"{path}: bad header: {exc}") from exc
    if header.get("format") != MODEL_FORMAT:
        raise MalformedHeader(f"{path}: not a model file")
    if header.get("version") != MODEL_VERSION:
        raise MalformedHeader(f"{path}: unsupported version {header.get('version')}")
    arrays = {}
    pos = newline + 1
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        size = int(np.prod(shape)) if shape else 1
        end = pos + size * 8
        if end > len(raw):
            raise MalformedHeader(f"{path}: truncated payload")
        arrays[spec["name"]] = np.frombuffer(
            raw[pos:end], dtype="<f8"
        ).reshape(shape)
        pos = end
    if pos != len(raw):
        raise MalformedHeader(f"{path}: trailing bytes after payload")
    return header, arrays


def save_pca(model: PcaWhitening, path):
    check_fitted(model, "components_")
    meta = {
        "type": "pca",
        "D": model.components_.shape[1],
        "N": model.n_components_,
        "whiten": bool(model.whiten),
        "center": bool(model.center),
        "sign_convention": SIGN_CONVENTION,
    }
    _write(path, meta, [
        ("mean", model.mean_),
        ("components", model.components_),
        ("singular_values", model.singular_values_),
    ])


def load_pca(path) -> PcaWhitening:
    header, arrays = _read(path)
    if header["type"] != "pca":
        raise MalformedHeader(f"{path}: expected pca model, got {header['type']}")
    model = PcaWhitening(
        n_components=header["N"], whiten=header["whiten"],
        center=header.get("center", True),
    )
    model.mean_ = arrays["mean"]
    model.components_ = arrays["components"]
    model.singular_values_ = arrays["singular_values"]
    model.n_components_ = header["N"]
    return model


def save_kmeans(model: KMeansCodebook, path):
    check_fitted(model, "cluster_centers_")
    meta = {
        "type": "kmeans",
        "K": model.n_clusters,
        "d": model.cluster_centers_.shape[1],
        "seed": model.seed,
    }
    _write(path, meta, [("centroids", model.cluster_centers_)])


def load_kmeans(path) -> KMeansCodebook:
    header, arrays = _read(path)
    if header["type"] != "kmeans":
        raise MalformedHeader(f"{path}: expected kmeans model, got {header['type']}")
    model = KMeansCodebook(n_clusters=header["K"], seed=header["seed"])
    model.cluster_centers_ = arrays["centroids"]
    return model


def save_gmm(model: DiagonalGaussianMixture, path):
    check_fitted(model, "means_")
    meta = {
        "type": "gmm",
        "K": model.n_components,
        "d": model.means_.shape[1],
        "seed": model.seed,
    }
    _write(path, meta, [
        ("weights", model.weights_),
        ("means", model.means_),
        ("variances", model.variances_),
    ])


def load_gmm(path) -> DiagonalGaussianMixture:
    header, arrays = _read(path)
    if header["type"] != "gmm":
        raise MalformedHeader(f"{path}: expected gmm model, got {header['type']}")
    model = DiagonalGaussianMixture(n_components=header["K"], seed=header["seed"])
    model.weights_ = arrays["weights"]
    model.means_ = arrays["means"]
    model.variances_ = arrays["variances"]
    return model


def save_encoder(encoder, path):
    if isinstance(encoder, VladEncoder):
        meta = {
            "type": "vlad-encoder",
            "K": encoder.n_clusters,
            "d": encoder.centroids_.shape[1],
            "seed": encoder.seed,
        }
        _write(path, meta, [("centroids", encoder.centroids_)])
    elif isinstance(encoder, FisherEncoder):
        check_fitted(encoder, "gmm_")
        arrays = [
            ("weights", encoder.gmm_.weights_),
            ("means", encoder.gmm_.means_),
            ("variances", encoder.gmm_.variances_),
        ]
        meta = {
            "type": "fisher-encoder",
            "K": encoder.n_components,
            "d": encoder.gmm_.means_.shape[1],
            "seed": encoder.seed,
            "reduce_dim": encoder.reduce_dim,
            "reduced": encoder.reducer_ is not None,
        }
        if encoder.reducer_ is not None:
            arrays += [
                ("reducer_mean", encoder.reducer_.mean_),
                ("reducer_components", encoder.reducer_.components_),
                ("reducer_singular_values", encoder.reducer_.singular_values_),
            ]
        _write(path, meta, arrays)
    elif isinstance(encoder, TriangulationEncoder):
        check_fitted(encoder, "stats_")
        meta = {
            "type": "temb-encoder",
            "K": encoder.n_clusters,
            "d": encoder.centroids_.shape[1],
            "seed": encoder.seed,
            "sqrt_features": bool(encoder.sqrt_features),
            "drop_high_energy": encoder.drop_high_energy,
        }
        _write(path, meta, [
            ("centroids", encoder.centroids_),
            ("stats_mean", encoder.stats_.mean_),
            ("stats_components", encoder.stats_.components_),
            ("stats_singular_values", encoder.stats_.singular_values_),
        ])
    else:
        raise TypeError(f"unknown encoder type {type(encoder).__name__}")


def load_encoder(path):
    header, arrays = _read(path)
    kind = header["type"]
    if kind == "vlad-encoder":
        encoder = VladEncoder(n_clusters=header["K"], seed=header["seed"])
        codebook = KMeansCodebook(n_clusters=header["K"], seed=header["seed"])
        codebook.cluster_centers_ = arrays["centroids"]
        encoder.codebook_ = codebook
        return encoder
    if kind == "fisher-encoder":
        encoder = FisherEncoder(
            n_components=header["K"], reduce_dim=header["reduce_dim"],
            seed=header["seed"],
        )
        gmm = DiagonalGaussianMixture(n_components=header["K"], seed=header["seed"])
        gmm.weights_ = arrays["weights"]
        gmm.means_ = arrays["means"]
        gmm.variances_ = arrays["variances"]
        encoder.gmm_ = gmm
        if header["reduced"]:
            reducer = PcaWhitening(
                n_components=arrays["reducer_components"].shape[0], whiten=False
            )
            reducer.mean_ = arrays["reducer_mean"]
            reducer.components_ = arrays["reducer_components"]
            reducer.singular_values_ = arrays["reducer_singular_values"]
            reducer.n_components_ = reducer.components_.shape[0]
            encoder.reducer_ = reducer
        else:
            encoder.reducer_ = None
        return encoder
    if kind == "temb-encoder":
        encoder = TriangulationEncoder(
            n_clusters=header["K"], seed=header["seed"],
            sqrt_features=header["sqrt_features"],
            drop_high_energy=header["drop_high_energy"],
        )
        codebook = KMeansCodebook(n_clusters=header["K"], seed=header["seed"])
        codebook.cluster_centers_ = arrays["centroids"]
        encoder.codebook_ = codebook
        stats = PcaWhitening(
            n_components=arrays["stats_components"].shape[0], whiten=True
        )
        stats.mean_ = arrays["stats_mean"]
        stats.components_ = arrays["stats_components"]
        stats.singular_values_ = arrays["stats_singular_values"]
        stats.n_components_ = stats.components_.shape[0]
        encoder.stats_ = stats
        return encoder
    raise MalformedHeader(f"{path}: unknown encoder type {kind!r}")
