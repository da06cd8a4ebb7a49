import json

import numpy as np
import pytest

import spoc.cli as cli
from spoc.cli import main
from spoc.retrieval import DescriptorIndex

from conftest import make_scene_corpus, write_corpus


@pytest.fixture
def corpus(tmp_path, rng):
    """Hold-out and evaluation corpora plus ground truth on disk."""
    holdout_maps, _ = make_scene_corpus(rng, n_scenes=6, per_scene=5)
    eval_rng = np.random.default_rng(7)
    eval_maps, truth = make_scene_corpus(eval_rng, n_scenes=6, per_scene=5)
    holdout_manifest, _ = write_corpus(holdout_maps, {}, tmp_path / "holdout")
    eval_manifest, truth_path = write_corpus(eval_maps, truth, tmp_path / "eval")
    return {
        "holdout": holdout_manifest,
        "eval": eval_manifest,
        "truth": truth_path,
        "eval_ids": [m.image_id for m in eval_maps],
        "root": tmp_path,
    }


def run(*argv):
    return main([str(a) for a in argv])


def fit_models(corpus, method="spoc", dim=8, seed=0):
    models = corpus["root"] / f"models-{method}"
    code = run(
        "fit", "--method", method, "--holdout-manifest", corpus["holdout"],
        "--out", models, "--seed", seed, "--dim", dim,
    )
    assert code == 0
    return models


class TestEndToEnd:
    def test_fit_aggregate_index_evaluate(self, corpus, capsys):
        models = fit_models(corpus)
        descriptors = corpus["root"] / "eval.desc"
        assert run("aggregate", "--manifest", corpus["eval"],
                   "--models", models, "--out", descriptors) == 0
        index = corpus["root"] / "eval.idx"
        assert run("index", "--descriptors", descriptors, "--out", index) == 0
        results = corpus["root"] / "map.csv"
        assert run("evaluate", "map", "--index", index,
                   "--query-descriptors", descriptors,
                   "--ground-truth", corpus["truth"], "--out", results) == 0
        out = capsys.readouterr().out
        line = [l for l in out.splitlines() if l.startswith("mAP")][-1]
        value = float(line.split("\t")[1])
        assert 0.0 <= value <= 1.0
        rows = results.read_text().strip().splitlines()
        assert rows[0] == "query_id,average_precision"
        assert len(rows) == 1 + len(corpus["eval_ids"])

    def test_ukb_protocol(self, corpus, capsys):
        models = fit_models(corpus)
        descriptors = corpus["root"] / "eval.desc"
        run("aggregate", "--manifest", corpus["eval"], "--models", models,
            "--out", descriptors)
        index = corpus["root"] / "eval.idx"
        run("index", "--descriptors", descriptors, "--out", index)
        results = corpus["root"] / "ukb.csv"
        assert run("evaluate", "ukb", "--index", index,
                   "--query-descriptors", descriptors,
                   "--ground-truth", corpus["truth"], "--out", results) == 0
        out = capsys.readouterr().out
        line = [l for l in out.splitlines() if l.startswith("ukb_score")][-1]
        assert 0.0 <= float(line.split("\t")[1]) <= 4.0

    def test_query_prints_sorted_results(self, corpus, capsys):
        models = fit_models(corpus)
        descriptors = corpus["root"] / "eval.desc"
        run("aggregate", "--manifest", corpus["eval"], "--models", models,
            "--out", descriptors)
        index = corpus["root"] / "eval.idx"
        run("index", "--descriptors", descriptors, "--out", index)
        feature_file = corpus["root"] / "eval" / f"{corpus['eval_ids'][0]}.feat"
        assert run("query", "--index", index, "--features", feature_file,
                   "--models", models, "--k", 5) == 0
        lines = [
            l for l in capsys.readouterr().out.splitlines() if "\t" in l
        ]
        assert len(lines) == 5
        sims = [float(l.split("\t")[1]) for l in lines]
        assert sims == sorted(sims, reverse=True)
        # Self-match first with similarity ~1.
        assert lines[0].split("\t")[0] == corpus["eval_ids"][0]

    def test_query_with_crop(self, corpus, capsys):
        models = fit_models(corpus)
        descriptors = corpus["root"] / "eval.desc"
        run("aggregate", "--manifest", corpus["eval"], "--models", models,
            "--out", descriptors)
        index = corpus["root"] / "eval.idx"
        run("index", "--descriptors", descriptors, "--out", index)
        feature_file = corpus["root"] / "eval" / f"{corpus['eval_ids'][0]}.feat"
        assert run("query", "--index", index, "--features", feature_file,
                   "--models", models, "--k", 3, "--crop", "0,0,50,50") == 0
        lines = [
            l for l in capsys.readouterr().out.splitlines() if "\t" in l
        ]
        assert len(lines) == 3


class TestAnalyze:
    def test_ratio_curve_rows(self, corpus, capsys):
        out = corpus["root"] / "curve.csv"
        assert run("analyze", "ratio-curve", "--manifest", corpus["holdout"],
                   "--query-manifest", corpus["eval"], "--k-max", 17,
                   "--per-query", 3, "--out", out) == 0
        rows = out.read_text().strip().splitlines()
        assert rows[0] == "k,ratio"
        assert len(rows) == 1 + 17
        ratios = [float(r.split(",")[1]) for r in rows[1:]]
        assert ratios == sorted(ratios)

    def test_heatmap_shape(self, corpus):
        models = fit_models(corpus)
        descriptors = corpus["root"] / "eval.desc"
        run("aggregate", "--manifest", corpus["eval"], "--models", models,
            "--out", descriptors)
        index = corpus["root"] / "eval.idx"
        run("index", "--descriptors", descriptors, "--out", index)
        feature_file = corpus["root"] / "eval" / f"{corpus['eval_ids'][1]}.feat"
        out = corpus["root"] / "heat.csv"
        assert run("analyze", "heatmap", "--features", feature_file,
                   "--models", models, "--index", index,
                   "--target-id", corpus["eval_ids"][2], "--out", out) == 0
        rows = out.read_text().strip().splitlines()
        assert len(rows) == 6  # grid height
        assert all(len(r.split(",")) == 6 for r in rows)
        values = [float(v) for r in rows for v in r.split(",")]
        assert all(-1.0 <= v <= 1.0 for v in values)

    def test_norm_subsample_reports_two_maps(self, corpus, capsys):
        out = corpus["root"] / "norm.csv"
        assert run("analyze", "norm-subsample", "--manifest", corpus["eval"],
                   "--ground-truth", corpus["truth"], "--fraction", 0.1,
                   "--seed", 3, "--out", out) == 0
        stdout = capsys.readouterr().out
        assert "map_top_norm" in stdout
        assert "map_random" in stdout
        rows = out.read_text().strip().splitlines()
        assert rows[0] == "query_id,ap_top_norm,ap_random"
        assert len(rows) == 1 + len(corpus["eval_ids"])


class TestExitCodes:
    def test_missing_seed_is_usage_error(self, corpus):
        assert run("fit", "--method", "spoc",
                   "--holdout-manifest", corpus["holdout"],
                   "--out", corpus["root"] / "m") == 1

    def test_unknown_method_is_usage_error(self, corpus):
        assert run("fit", "--method", "bogus",
                   "--holdout-manifest", corpus["holdout"],
                   "--out", corpus["root"] / "m", "--seed", 0) == 1

    def test_missing_manifest_is_data_error(self, corpus):
        assert run("fit", "--method", "spoc",
                   "--holdout-manifest", corpus["root"] / "nope.json",
                   "--out", corpus["root"] / "m", "--seed", 0) == 2

    def test_rank_deficient_is_numeric_error(self, corpus, tmp_path, rng):
        # Constant maps: aggregated descriptors have rank 0 after centering.
        from conftest import make_map
        from spoc.features import FeatureMap, write_feature_file, write_manifest
        maps = []
        base = make_map(rng, channels=4, height=2, width=2)
        for i in range(10):
            maps.append(FeatureMap(f"const{i}", base.data, base.geometry))
        directory = tmp_path / "const"
        directory.mkdir()
        entries = []
        for fmap in maps:
            path = directory / f"{fmap.image_id}.feat"
            write_feature_file(fmap, path)
            entries.append((fmap.image_id, path.name))
        manifest = directory / "manifest.json"
        write_manifest(entries, manifest)
        assert run("fit", "--method", "spoc", "--holdout-manifest", manifest,
                   "--out", tmp_path / "m", "--seed", 0, "--dim", 2) == 3

    def test_bad_crop_string_is_usage_error(self, corpus):
        models = fit_models(corpus)
        descriptors = corpus["root"] / "crop.desc"
        run("aggregate", "--manifest", corpus["eval"], "--models", models,
            "--out", descriptors)
        index = corpus["root"] / "crop.idx"
        run("index", "--descriptors", descriptors, "--out", index)
        feature_file = corpus["root"] / "eval" / f"{corpus['eval_ids'][0]}.feat"
        assert run("query", "--index", index,
                   "--features", feature_file, "--models", models,
                   "--crop", "1,2,3") == 1

    def test_missing_index_is_data_error(self, corpus):
        models = fit_models(corpus)
        feature_file = corpus["root"] / "eval" / f"{corpus['eval_ids'][0]}.feat"
        assert run("query", "--index", corpus["root"] / "missing.idx",
                   "--features", feature_file, "--models", models) == 2


class TestConfigPrecedence:
    def test_config_supplies_defaults_flags_override(self, corpus):
        config = corpus["root"] / "conf.json"
        config.write_text(json.dumps({"dim": 4, "seed": 9}), encoding="utf-8")
        models = corpus["root"] / "models-conf"
        assert run("fit", "--method", "spoc",
                   "--holdout-manifest", corpus["holdout"],
                   "--out", models, "--config", config, "--dim", 6) == 0
        sidecar = json.loads((models / "config.json").read_text())
        assert sidecar["options"]["dim"] == 6  # flag wins
        assert sidecar["options"]["seed"] == 9  # config fills the gap

    def test_sidecar_written_next_to_output(self, corpus):
        models = fit_models(corpus)
        descriptors = corpus["root"] / "withconf.desc"
        assert run("aggregate", "--manifest", corpus["eval"],
                   "--models", models, "--out", descriptors) == 0
        sidecar = descriptors.parent / (descriptors.name + ".config.json")
        payload = json.loads(sidecar.read_text())
        assert payload["command"] == "aggregate"


class TestFitBehavior:
    def test_overlap_warning(self, corpus, capsys):
        models = corpus["root"] / "models-overlap"
        assert run("fit", "--method", "spoc",
                   "--holdout-manifest", corpus["eval"],
                   "--manifest", corpus["eval"],
                   "--out", models, "--seed", 0, "--dim", 4) == 0
        assert "warning" in capsys.readouterr().err.lower()

    def test_same_seed_fits_byte_identical(self, corpus):
        m1 = fit_models(corpus, method="fv", dim=4, seed=5)
        m2path = corpus["root"] / "models-fv-again"
        assert run("fit", "--method", "fv",
                   "--holdout-manifest", corpus["holdout"],
                   "--out", m2path, "--seed", 5, "--dim", 4) == 0
        for name in ("pipeline.json", "pca.spocm", "encoder.spocm"):
            assert (m1 / name).read_bytes() == (m2path / name).read_bytes()

    def test_method_mismatch_detected(self, corpus):
        models = fit_models(corpus)
        descriptors = corpus["root"] / "mismatch.desc"
        assert run("aggregate", "--manifest", corpus["eval"],
                   "--models", models, "--method", "max",
                   "--out", descriptors) == 2

    def test_fit_diagnostics_on_stderr(self, corpus, capsys):
        fit_models(corpus, method="fv", dim=4)
        err = capsys.readouterr().err
        assert "variance" in err
        assert "log-likelihood" in err


class TestPartialOutputCleanup:
    def test_outputs_removed_when_late_step_fails(self, corpus, monkeypatch):
        models = fit_models(corpus)
        descriptors = corpus["root"] / "cleanup.desc"

        def boom(*args, **kwargs):
            raise cli.DataError("sidecar write failed")

        monkeypatch.setattr(cli, "_write_sidecar", boom)
        assert run("aggregate", "--manifest", corpus["eval"],
                   "--models", models, "--out", descriptors) == 2
        assert not descriptors.exists()


class TestDescriptorFileContents:
    def test_aggregate_output_loads_as_index(self, corpus):
        models = fit_models(corpus)
        descriptors = corpus["root"] / "loadable.desc"
        run("aggregate", "--manifest", corpus["eval"], "--models", models,
            "--out", descriptors)
        loaded = DescriptorIndex.load(descriptors)
        assert loaded.ids == corpus["eval_ids"]
        norms = np.linalg.norm(loaded.matrix, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-5)
