"""Shared fixtures: random feature maps and a synthetic retrieval corpus."""

import json
import math

import numpy as np
import pytest

from spoc.features import FeatureMap, ReceptiveFieldGeometry, write_feature_file, write_manifest


def make_map(rng, channels=4, height=3, width=3, image_id="img", stride=16,
             offset=8, scale=1.0):
    """Random feature map with consistent geometry."""
    data = (rng.standard_normal((channels, height, width)) * scale).astype(
        np.float32
    )
    geometry = ReceptiveFieldGeometry(
        stride=stride,
        offset=offset,
        input_height=offset + stride * height,
        input_width=offset + stride * width,
    )
    return FeatureMap(image_id=image_id, data=data, geometry=geometry)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_scene_corpus(rng, n_scenes=10, per_scene=5, channels=16, grid=6,
                      noise=0.3):
    """Synthetic corpus of feature maps grouped into same-scene classes.

    Every image of a scene shares a prototype direction perturbed by noise,
    so same-scene images are mutually closest under sum pooling.  Returns
    (maps, truth) where truth maps every image id to its same-scene ids.
    """
    prototypes = rng.standard_normal((n_scenes, channels)) * 2.0
    maps = []
    truth = {}
    ids_by_scene = [
        [f"scene{s:02d}_img{i}" for i in range(per_scene)]
        for s in range(n_scenes)
    ]
    for s in range(n_scenes):
        for i in range(per_scene):
            base = prototypes[s][:, np.newaxis, np.newaxis]
            data = base + noise * rng.standard_normal((channels, grid, grid))
            geometry = ReceptiveFieldGeometry(
                stride=16, offset=8, input_height=16 * grid, input_width=16 * grid
            )
            maps.append(FeatureMap(
                image_id=ids_by_scene[s][i],
                data=data.astype(np.float32),
                geometry=geometry,
            ))
    for s in range(n_scenes):
        for i in range(per_scene):
            qid = ids_by_scene[s][i]
            truth[qid] = {
                "relevant": [x for x in ids_by_scene[s] if x != qid],
                "junk": [],
            }
    return maps, truth


def make_cluster_corpus(rng, n_scenes=8, per_scene=4, channels=24, grid=16,
                        hi_fraction=0.05, hi_scale=6.0, lo_scale=0.8):
    """Corpus where only a few high-norm cells carry class identity.

    A ``hi_fraction`` of cells per image hold large-norm scene-specific
    vectors; the rest are shared low-norm noise, mimicking the situation
    where top-norm features are far more discriminative than random ones.
    """
    prototypes = rng.standard_normal((n_scenes, channels))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)
    n_cells = grid * grid
    n_hi = max(1, math.ceil(hi_fraction * n_cells))
    maps = []
    truth = {}
    for s in range(n_scenes):
        scene_ids = [f"c{s:02d}_{i}" for i in range(per_scene)]
        for i in range(per_scene):
            cells = lo_scale * rng.standard_normal((n_cells, channels))
            hi_idx = rng.choice(n_cells, size=n_hi, replace=False)
            cells[hi_idx] = hi_scale * (
                prototypes[s] + 0.1 * rng.standard_normal((n_hi, channels))
            )
            data = cells.T.reshape(channels, grid, grid)
            geometry = ReceptiveFieldGeometry(
                stride=16, offset=8, input_height=16 * grid, input_width=16 * grid
            )
            maps.append(FeatureMap(
                image_id=scene_ids[i], data=data.astype(np.float32),
                geometry=geometry,
            ))
        for i in range(per_scene):
            qid = scene_ids[i]
            truth[qid] = {
                "relevant": [x for x in scene_ids if x != qid],
                "junk": [],
            }
    return maps, truth


def write_corpus(maps, truth, directory):
    """Write maps + manifest + ground truth under a directory."""
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for fmap in maps:
        path = directory / f"{fmap.image_id}.feat"
        write_feature_file(fmap, path)
        entries.append((fmap.image_id, path.name))
    manifest = directory / "manifest.json"
    write_manifest(entries, manifest)
    truth_path = directory / "truth.json"
    truth_path.write_text(json.dumps(truth, sort_keys=True, indent=2),
                          encoding="utf-8")
    return manifest, truth_path
