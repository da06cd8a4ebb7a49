import numpy as np
import pytest

from spoc.errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyCrop,
    MalformedHeader,
    NotNormalized,
)
from spoc.features import FeatureMap, ReceptiveFieldGeometry
from spoc.pooling import sum_pool
from spoc.postprocess import PcaWhitening, l2_normalize
from spoc.retrieval import (
    DescriptorIndex,
    QueryBox,
    crop_filter_features,
    similarity_heatmap,
)

from conftest import make_map


def unit(v):
    return l2_normalize(np.asarray(v, dtype=np.float64))


class TestIndexBuild:
    def test_three_descriptors(self, rng):
        pairs = [(f"im{i}", unit(rng.standard_normal(8))) for i in range(3)]
        index = DescriptorIndex.build(pairs)
        assert len(index) == 3
        assert index.ids == ["im0", "im1", "im2"]

    def test_duplicate_id(self, rng):
        v = unit(rng.standard_normal(4))
        with pytest.raises(DuplicateId):
            DescriptorIndex.build([("a", v), ("a", v)])

    def test_not_normalized(self):
        with pytest.raises(NotNormalized):
            DescriptorIndex.build([("a", np.array([1.0, 1.0]))])

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionMismatch):
            DescriptorIndex.build([
                ("a", unit(rng.standard_normal(4))),
                ("b", unit(rng.standard_normal(5))),
            ])


class TestSearch:
    def test_self_query_ranks_first_with_similarity_one(self, rng):
        pairs = [(f"im{i}", unit(rng.standard_normal(16))) for i in range(5)]
        index = DescriptorIndex.build(pairs)
        results = index.search(index.descriptor("im3"))
        assert results[0][0] == "im3"
        assert results[0][1] == pytest.approx(1.0, abs=1e-6)

    def test_orthonormal_basis(self):
        index = DescriptorIndex.build([
            ("e1", np.array([1.0, 0.0])),
            ("e2", np.array([0.0, 1.0])),
        ])
        results = index.search(np.array([1.0, 0.0]))
        assert results == [("e1", 1.0), ("e2", 0.0)]

    def test_tie_keeps_insertion_order(self):
        v = np.array([1.0, 0.0])
        index = DescriptorIndex.build([("first", v), ("second", v)])
        results = index.search(v)
        assert [r[0] for r in results] == ["first", "second"]

    def test_similarities_non_increasing_and_complete(self, rng):
        pairs = [(f"im{i}", unit(rng.standard_normal(6))) for i in range(12)]
        index = DescriptorIndex.build(pairs)
        results = index.search(unit(rng.standard_normal(6)))
        sims = [s for _, s in results]
        assert sims == sorted(sims, reverse=True)
        assert sorted(r for r, _ in results) == sorted(index.ids)

    def test_top_k_prefix(self, rng):
        pairs = [(f"im{i}", unit(rng.standard_normal(6))) for i in range(9)]
        index = DescriptorIndex.build(pairs)
        q = unit(rng.standard_normal(6))
        assert index.search(q, k=4) == index.search(q)[:4]

    def test_query_dimension_checked(self, rng):
        index = DescriptorIndex.build([("a", unit(rng.standard_normal(4)))])
        with pytest.raises(DimensionMismatch):
            index.search(np.ones(5))


class TestIndexFile:
    def test_save_load_round_trip(self, tmp_path, rng):
        pairs = [(f"im/{i}", unit(rng.standard_normal(8))) for i in range(4)]
        index = DescriptorIndex.build(pairs)
        path = tmp_path / "index.spoci"
        index.save(path)
        loaded = DescriptorIndex.load(path)
        assert loaded.ids == index.ids
        np.testing.assert_array_equal(loaded.matrix, index.matrix)

    def test_save_deterministic(self, tmp_path, rng):
        pairs = [(f"im{i}", unit(rng.standard_normal(8))) for i in range(4)]
        index = DescriptorIndex.build(pairs)
        p1, p2 = tmp_path / "a.idx", tmp_path / "b.idx"
        index.save(p1)
        index.save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.idx"
        path.write_bytes(b"garbagegarbage")
        with pytest.raises(MalformedHeader):
            DescriptorIndex.load(path)


def grid_map(rng, channels=2, grid=6, stride=16, offset=8):
    data = rng.standard_normal((channels, grid, grid)).astype(np.float32)
    geometry = ReceptiveFieldGeometry(
        stride=stride, offset=offset,
        input_height=offset + stride * grid, input_width=offset + stride * grid,
    )
    return FeatureMap("grid", data, geometry)


class TestCropFilter:
    def test_full_image_box_keeps_everything(self, rng):
        fmap = grid_map(rng)
        box = QueryBox(0, 0, fmap.geometry.input_width - 1,
                       fmap.geometry.input_height - 1)
        cropped = crop_filter_features(fmap, box)
        assert (cropped.height, cropped.width) == (fmap.height, fmap.width)
        np.testing.assert_array_equal(cropped.data, fmap.data)

    def test_box_between_centers_is_empty(self, rng):
        # Centers sit at 8, 24, 40, ...; (9..23) contains none.
        fmap = grid_map(rng)
        with pytest.raises(EmptyCrop):
            crop_filter_features(fmap, QueryBox(9, 9, 23, 23))

    def test_three_by_three_center_enumeration(self, rng):
        # Centers {8, 24, 40} fall inside [0, 40] on both axes.
        fmap = grid_map(rng)
        cropped = crop_filter_features(fmap, QueryBox(0, 0, 40, 40))
        assert (cropped.height, cropped.width) == (3, 3)
        expected_centers = {
            fmap.receptive_field_center(x, y)
            for x in range(1, 4) for y in range(1, 4)
        }
        got_centers = {
            cropped.receptive_field_center(x, y)
            for x in range(1, 4) for y in range(1, 4)
        }
        assert got_centers == expected_centers
        np.testing.assert_array_equal(cropped.data, fmap.data[:, :3, :3])

    def test_offsets_shift_with_the_crop(self, rng):
        fmap = grid_map(rng)
        cropped = crop_filter_features(fmap, QueryBox(30, 0, 60, 90))
        # Kept columns: centers 40, 56 -> cells 3..4; rows: 8..88 -> 1..6.
        assert cropped.width == 2
        assert cropped.height == 6
        assert cropped.receptive_field_center(1, 1) == (40, 8)
        assert cropped.geometry.offset_x == 40
        assert cropped.geometry.offset_y == 8

    def test_crop_then_sum_pool_equals_manual_subset(self, rng):
        for _ in range(20):
            grid = int(rng.integers(3, 8))
            fmap = grid_map(rng, channels=3, grid=grid)
            limit = fmap.geometry.input_width - 1
            while True:
                xs = np.sort(rng.integers(0, limit + 1, size=2))
                ys = np.sort(rng.integers(0, limit + 1, size=2))
                if xs[0] < xs[1] and ys[0] < ys[1]:
                    box = QueryBox(int(xs[0]), int(ys[0]), int(xs[1]), int(ys[1]))
                    try:
                        cropped = crop_filter_features(fmap, box)
                        break
                    except EmptyCrop:
                        continue
            manual = np.zeros(fmap.channels)
            for y in range(1, fmap.height + 1):
                for x in range(1, fmap.width + 1):
                    px, py = fmap.receptive_field_center(x, y)
                    if box.x_min <= px <= box.x_max and box.y_min <= py <= box.y_max:
                        manual += fmap.data[:, y - 1, x - 1].astype(np.float64)
            np.testing.assert_allclose(sum_pool(cropped), manual, rtol=1e-12)

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError):
            QueryBox(10, 0, 10, 20)

    def test_box_outside_image_rejected(self, rng):
        fmap = grid_map(rng)
        limit = fmap.geometry.input_width - 1
        with pytest.raises(ValueError):
            crop_filter_features(fmap, QueryBox(0, 0, limit + 10, limit))

    def test_asymmetric_crop_view_is_not_serializable(self, tmp_path, rng):
        # The single-offset file format cannot express different x/y starts.
        from spoc.errors import InvalidGeometry
        from spoc.features import write_feature_file
        fmap = grid_map(rng)
        cropped = crop_filter_features(fmap, QueryBox(30, 0, 90, 90))
        assert cropped.geometry.offset_x != cropped.geometry.offset_y
        with pytest.raises(InvalidGeometry):
            write_feature_file(cropped, tmp_path / "crop.feat")

    def test_crop_of_crop_composes(self, rng):
        fmap = grid_map(rng, grid=6)
        outer = crop_filter_features(fmap, QueryBox(0, 0, 60, 90))
        inner = crop_filter_features(outer, QueryBox(20, 20, 60, 60))
        direct = crop_filter_features(fmap, QueryBox(20, 20, 60, 60))
        np.testing.assert_array_equal(inner.data, direct.data)
        assert inner.geometry == direct.geometry


class TestSimilarityHeatmap:
    def fit_model(self, rng, channels=6, n=60, n_components=3):
        X = rng.standard_normal((n, channels))
        return PcaWhitening(n_components=n_components, whiten=True).fit(X)

    def test_self_cell_scores_one(self, rng):
        fmap = make_map(rng, channels=6, height=3, width=4)
        model = self.fit_model(rng)
        cell = fmap.data[:, 1, 2].astype(np.float64)
        target = l2_normalize(model.transform(cell))
        heat = similarity_heatmap(fmap, model, target)
        assert heat[1, 2] == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_target_gives_zeros(self, rng):
        fmap = make_map(rng, channels=4, height=2, width=2)
        model = PcaWhitening(n_components=2, whiten=False).fit(
            rng.standard_normal((30, 4))
        )
        # A target orthogonal to every projected cell: make all cells equal
        # so a single 2-D rotation suffices.
        data = np.tile(fmap.data[:, :1, :1], (1, 2, 2))
        fmap_const = FeatureMap("const", data, fmap.geometry)
        z = model.transform(fmap_const.features_matrix().astype(np.float64))[0]
        ortho = l2_normalize(np.array([-z[1], z[0]]))
        heat = similarity_heatmap(fmap_const, model, ortho)
        np.testing.assert_allclose(heat, 0.0, atol=1e-9)

    def test_matches_per_cell_manual_computation(self, rng):
        fmap = make_map(rng, channels=5, height=3, width=3)
        model = self.fit_model(rng, channels=5)
        target = l2_normalize(rng.standard_normal(3))
        heat = similarity_heatmap(fmap, model, target)
        for y in range(3):
            for x in range(3):
                z = model.transform(fmap.data[:, y, x].astype(np.float64))
                want = float(z @ target / (np.linalg.norm(z) * 1.0))
                assert heat[y, x] == pytest.approx(want, rel=1e-9)

    def test_values_within_unit_interval(self, rng):
        fmap = make_map(rng, channels=6, height=4, width=4)
        model = self.fit_model(rng)
        target = l2_normalize(rng.standard_normal(3))
        heat = similarity_heatmap(fmap, model, target)
        assert np.all(heat >= -1.0) and np.all(heat <= 1.0)

    def test_dimension_mismatch(self, rng):
        fmap = make_map(rng, channels=6, height=2, width=2)
        model = self.fit_model(rng)
        with pytest.raises(DimensionMismatch):
            similarity_heatmap(fmap, model, np.ones(5))
