"""Command-line front end.

Subcommands: fit, aggregate, index, query, evaluate (map|ukb), and
analyze (ratio-curve|heatmap|norm-subsample).  Results go to declared
output files or stdout; logs go to stderr.  Option precedence is
flags > --config file > defaults, and every command echoes its effective
configuration to a sidecar JSON next to its output.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Outputs written before a failure are deleted.
"""

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .errors import DataError, NumericError, SpocError
from .evaluation import (
    average_precision,
    distance_ratio_curve,
    load_ground_truth,
    select_top_norm_features,
)
from .features import load_feature_maps, read_feature_file, read_manifest
from .pipelines import METHODS, DescriptorPipeline
from .postprocess import l2_normalize
from .retrieval import DescriptorIndex, QueryBox, similarity_heatmap


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(value: float) -> str:
    """Shortest round-trip decimal form; deterministic across runs."""
    return repr(float(value))


def _parse_crop(text) -> QueryBox:
    parts = text.split(",")
    if len(parts) != 4:
        raise UsageError(f"--crop expects x0,y0,x1,y1, got {text!r}")
    try:
        x0, y0, x1, y1 = (int(p) for p in parts)
    except ValueError as exc:
        raise UsageError(f"--crop expects integers: {exc}") from exc
    try:
        return QueryBox(x_min=x0, y_min=y0, x_max=x1, y_max=y1)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


class _Options:
    """Merges flag values, --config file entries, and defaults."""

    def __init__(self, args):
        self.args = vars(args)
        self.config = {}
        self.effective = {}
        config_path = self.args.get("config")
        if config_path:
            try:
                self.config = json.loads(Path(config_path).read_text("utf-8"))
            except OSError as exc:
                raise DataError(f"cannot read config {config_path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise DataError(f"bad config JSON: {exc}") from exc
            if not isinstance(self.config, dict):
                raise DataError("config file must hold a JSON object")

    def get(self, name, default=None, required=False):
        key = name.replace("-", "_")
        value = self.args.get(key)
        if value is None:
            value = self.config.get(name)
        if value is None:
            value = default
        if value is None and required:
            raise UsageError(f"--{name} is required")
        self.effective[name] = value
        return value


def _write_sidecar(out_path, command, options: _Options):
    out_path = Path(out_path)
    if out_path.is_dir():
        sidecar = out_path / "config.json"
    else:
        sidecar = out_path.with_name(out_path.name + ".config.json")
    payload = {
        "command": command,
        "options": {
            k: (str(v) if isinstance(v, Path) else v)
            for k, v in sorted(options.effective.items())
        },
    }
    sidecar.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                       encoding="utf-8")
    return sidecar


def _log(message):
    print(message, file=sys.stderr)


def _load_pipeline(models_dir, method=None) -> DescriptorPipeline:
    pipeline = DescriptorPipeline.load(models_dir)
    if method is not None and pipeline.method != method:
        raise DataError(
            f"models at {models_dir} were fitted with method "
            f"{pipeline.method!r}, not {method!r}"
        )
    return pipeline


def _write_csv(path, header, rows):
    lines = [header]
    lines += [",".join(str(cell) for cell in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- commands ----------------------------------------------------------------

def cmd_fit(args, outputs):
    opts = _Options(args)
    method = opts.get("method", required=True)
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {METHODS}")
    holdout = opts.get("holdout-manifest", required=True)
    eval_manifest = opts.get("manifest")
    out_dir = Path(opts.get("out", required=True))
    seed = opts.get("seed", required=True)
    pipeline = DescriptorPipeline(
        method=method,
        n_components=int(opts.get("dim", 256)),
        sigma=opts.get("sigma"),
        alpha=float(opts.get("alpha", 0.5)),
        codebook_size=opts.get("codebook-size"),
        fv_reduce_dim=int(opts.get("fv-reduce-dim", 32)),
        whiten=opts.get("whiten"),
        center_pca=not bool(opts.get("no-center-pca", False)),
        seed=int(seed),
    )
    if eval_manifest:
        holdout_ids = {i for i, _ in read_manifest(holdout)}
        eval_ids = {i for i, _ in read_manifest(eval_manifest)}
        shared = holdout_ids & eval_ids
        if shared:
            _log(
                f"warning: hold-out and evaluation manifests share "
                f"{len(shared)} image(s), e.g. {sorted(shared)[:3]}"
            )
    for name in ("pipeline.json", "pca.spocm", "encoder.spocm", "config.json"):
        outputs.append(out_dir / name)
    maps = list(load_feature_maps(holdout))
    pipeline.fit(maps)
    pipeline.save(out_dir)
    _write_sidecar(out_dir, "fit", opts)
    _log(
        f"fit {method} on {len(maps)} maps: PCA keeps "
        f"{pipeline.pca_.explained_variance_ratio_.sum():.4f} of variance "
        f"over {pipeline.pca_.n_components_} dims"
    )
    if method == "fv":
        gmm = pipeline.encoder_.gmm_
        _log(
            f"EM converged in {gmm.n_iter_} iterations, "
            f"final log-likelihood {gmm.log_likelihoods_[-1]:.4f}"
        )


def cmd_aggregate(args, outputs):
    opts = _Options(args)
    manifest = opts.get("manifest", required=True)
    models = opts.get("models", required=True)
    out = Path(opts.get("out", required=True))
    crop = opts.get("crop")
    box = _parse_crop(crop) if crop else None
    pipeline = _load_pipeline(models, opts.get("method"))
    outputs.append(out)
    pairs = []
    for fmap in load_feature_maps(manifest):
        pairs.append((fmap.image_id, pipeline.describe(fmap, box=box)))
    index = DescriptorIndex.build(pairs)
    index.save(out)
    _write_sidecar(out, "aggregate", opts)
    _log(f"aggregated {len(index)} descriptors ({index.dim} dims) -> {out}")


def cmd_index(args, outputs):
    opts = _Options(args)
    descriptors = opts.get("descriptors", required=True)
    out = Path(opts.get("out", required=True))
    loaded = DescriptorIndex.load(descriptors)
    # Re-validate through build: unit norms, unique ids.
    index = DescriptorIndex.build(
        (image_id, loaded.matrix[i].astype(np.float64))
        for i, image_id in enumerate(loaded.ids)
    )
    outputs.append(out)
    index.save(out)
    _write_sidecar(out, "index", opts)
    _log(f"indexed {len(index)} descriptors -> {out}")


def cmd_query(args, outputs):
    opts = _Options(args)
    index = DescriptorIndex.load(opts.get("index", required=True))
    features = opts.get("features", required=True)
    models = opts.get("models", required=True)
    k = int(opts.get("k", 10))
    crop = opts.get("crop")
    out = opts.get("out")
    pipeline = _load_pipeline(models, opts.get("method"))
    fmap = read_feature_file(features)
    box = _parse_crop(crop) if crop else None
    descriptor = pipeline.describe(fmap, box=box)
    results = index.search(descriptor, k=k)
    for image_id, sim in results:
        print(f"{image_id}\t{sim:.6f}")
    if out:
        outputs.append(Path(out))
        _write_csv(out, "image_id,similarity",
                   [(i, _fmt(s)) for i, s in results])
        _write_sidecar(out, "query", opts)


def _rankings(index: DescriptorIndex, queries: DescriptorIndex,
              include_self: bool):
    results = {}
    for i, query_id in enumerate(queries.ids):
        ranked = index.search(queries.matrix[i].astype(np.float64))
        ids = [r for r, _ in ranked]
        if not include_self:
            ids = [r for r in ids if r != query_id]
        results[query_id] = ids
    return results


def cmd_evaluate(args, outputs):
    opts = _Options(args)
    protocol = args.protocol
    index = DescriptorIndex.load(opts.get("index", required=True))
    queries = DescriptorIndex.load(opts.get("query-descriptors", required=True))
    truth = load_ground_truth(opts.get("ground-truth", required=True))
    out = Path(opts.get("out", required=True))
    include_self = bool(opts.get("include-self", protocol == "ukb"))
    results = _rankings(index, queries, include_self)
    outputs.append(out)
    if protocol == "map":
        rows = []
        aps = []
        for query_id, ranking in results.items():
            if query_id not in truth:
                raise DataError(f"no ground truth for query {query_id!r}")
            ap = average_precision(ranking, truth[query_id])
            aps.append(ap)
            rows.append((query_id, _fmt(ap)))
        _write_csv(out, "query_id,average_precision", rows)
        summary = float(np.mean(aps))
        print(f"mAP\t{summary:.6f}")
    else:
        rows = []
        scores = []
        for query_id, ranking in results.items():
            if query_id not in truth:
                raise DataError(f"no ground truth for query {query_id!r}")
            same = set(truth[query_id].relevant)
            if include_self:
                same.add(query_id)
            if len(ranking) < 4:
                raise DataError(f"query {query_id!r} ranking shorter than 4")
            score = len(same.intersection(ranking[:4]))
            scores.append(score)
            rows.append((query_id, score))
        _write_csv(out, "query_id,top4_same_object", rows)
        summary = float(np.mean(scores))
        print(f"ukb_score\t{summary:.6f}")
    _write_sidecar(out, f"evaluate-{protocol}", opts)
    _log(f"evaluated {len(results)} queries -> {out}")


def cmd_analyze_ratio_curve(args, outputs):
    opts = _Options(args)
    reference_manifest = opts.get("manifest", required=True)
    query_manifest = opts.get("query-manifest", required=True)
    per_query = int(opts.get("per-query", 10))
    k_max = int(opts.get("k-max", 100))
    out = Path(opts.get("out", required=True))
    reference = np.concatenate(
        [m.features_matrix().astype(np.float64)
         for m in load_feature_maps(reference_manifest)]
    )
    query_rows = []
    for fmap in load_feature_maps(query_manifest):
        frac = min(1.0, per_query / (fmap.height * fmap.width))
        top = select_top_norm_features(fmap, frac)[:per_query]
        query_rows.extend(f.vector.astype(np.float64) for f in top)
    curve = distance_ratio_curve(np.stack(query_rows), reference, k_max)
    outputs.append(out)
    _write_csv(out, "k,ratio",
               [(int(k), _fmt(r)) for k, r in zip(curve.ks, curve.ratios)])
    _write_sidecar(out, "analyze-ratio-curve", opts)
    _log(f"ratio curve over {len(query_rows)} query features -> {out}")


def cmd_analyze_heatmap(args, outputs):
    opts = _Options(args)
    features = opts.get("features", required=True)
    models = opts.get("models", required=True)
    target_id = opts.get("target-id", required=True)
    index = DescriptorIndex.load(opts.get("index", required=True))
    out = Path(opts.get("out", required=True))
    pipeline = _load_pipeline(models, opts.get("method"))
    fmap = read_feature_file(features)
    try:
        target = index.descriptor(target_id)
    except KeyError:
        raise DataError(f"target id {target_id!r} not in index") from None
    heatmap = similarity_heatmap(fmap, pipeline.pca_, target)
    outputs.append(out)
    lines = [",".join(_fmt(v) for v in row) for row in heatmap]
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_sidecar(out, "analyze-heatmap", opts)
    _log(f"heatmap {heatmap.shape[0]}x{heatmap.shape[1]} -> {out}")


def cmd_analyze_norm_subsample(args, outputs):
    opts = _Options(args)
    manifest = opts.get("manifest", required=True)
    truth = load_ground_truth(opts.get("ground-truth", required=True))
    fraction = float(opts.get("fraction", 0.01))
    seed = int(opts.get("seed", 0))
    out = Path(opts.get("out", required=True))
    maps = list(load_feature_maps(manifest))
    rng = np.random.default_rng(seed)
    top_descriptors = []
    random_descriptors = []
    for fmap in maps:
        cells = fmap.features_matrix().astype(np.float64)
        count = math.ceil(fraction * cells.shape[0])
        top = select_top_norm_features(fmap, fraction)
        top_sum = np.sum([f.vector.astype(np.float64) for f in top], axis=0)
        chosen = rng.choice(cells.shape[0], size=count, replace=False)
        rand_sum = cells[np.sort(chosen)].sum(axis=0)
        top_descriptors.append((fmap.image_id, l2_normalize(top_sum)))
        random_descriptors.append((fmap.image_id, l2_normalize(rand_sum)))
    rows = []
    summaries = {}
    for label, pairs in (("top_norm", top_descriptors),
                         ("random", random_descriptors)):
        index = DescriptorIndex.build(pairs)
        aps = {}
        for query_id, _ in pairs:
            ranked = [r for r, _ in index.search(index.descriptor(query_id))
                      if r != query_id]
            if query_id not in truth:
                raise DataError(f"no ground truth for query {query_id!r}")
            aps[query_id] = average_precision(ranked, truth[query_id])
        summaries[label] = float(np.mean(list(aps.values())))
        rows.append(aps)
    outputs.append(out)
    _write_csv(
        out, "query_id,ap_top_norm,ap_random",
        [(q, _fmt(rows[0][q]), _fmt(rows[1][q])) for q in rows[0]],
    )
    _write_sidecar(out, "analyze-norm-subsample", opts)
    print(f"map_top_norm\t{summaries['top_norm']:.6f}")
    print(f"map_random\t{summaries['random']:.6f}")


# -- parser ------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", help="JSON file with default option values")


def build_parser():
    parser = _Parser(prog="spoc", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    fit = subs.add_parser("fit", help="fit descriptor models on hold-out data")
    fit.add_argument("--method", choices=METHODS)
    fit.add_argument("--holdout-manifest")
    fit.add_argument("--manifest", help="evaluation manifest (overlap check)")
    fit.add_argument("--out")
    fit.add_argument("--seed", type=int)
    fit.add_argument("--dim", type=int)
    fit.add_argument("--sigma", type=float)
    fit.add_argument("--alpha", type=float)
    fit.add_argument("--codebook-size", type=int)
    fit.add_argument("--fv-reduce-dim", type=int)
    fit.add_argument("--whiten", action="store_const", const=True)
    fit.add_argument("--no-whiten", dest="whiten", action="store_const",
                     const=False)
    fit.add_argument("--no-center-pca", action="store_const", const=True)
    _add_common(fit)
    fit.set_defaults(func=cmd_fit)

    agg = subs.add_parser("aggregate", help="compute descriptors for a manifest")
    agg.add_argument("--method", choices=METHODS)
    agg.add_argument("--manifest")
    agg.add_argument("--models")
    agg.add_argument("--crop", help="x0,y0,x1,y1 in input pixels")
    agg.add_argument("--out")
    _add_common(agg)
    agg.set_defaults(func=cmd_aggregate)

    idx = subs.add_parser("index", help="validate descriptors into an index")
    idx.add_argument("--descriptors")
    idx.add_argument("--out")
    _add_common(idx)
    idx.set_defaults(func=cmd_index)

    qry = subs.add_parser("query", help="rank an index against one image")
    qry.add_argument("--index")
    qry.add_argument("--features", help="query feature file")
    qry.add_argument("--models")
    qry.add_argument("--method", choices=METHODS)
    qry.add_argument("--k", type=int)
    qry.add_argument("--crop", help="x0,y0,x1,y1 in input pixels")
    qry.add_argument("--out")
    _add_common(qry)
    qry.set_defaults(func=cmd_query)

    ev = subs.add_parser("evaluate", help="score rankings against ground truth")
    ev_subs = ev.add_subparsers(dest="protocol", required=True)
    for protocol in ("map", "ukb"):
        sub = ev_subs.add_parser(protocol)
        sub.add_argument("--index")
        sub.add_argument("--query-descriptors")
        sub.add_argument("--ground-truth")
        sub.add_argument("--out")
        sub.add_argument("--include-self", action="store_const", const=True)
        sub.add_argument("--exclude-self", dest="include_self",
                         action="store_const", const=False)
        _add_common(sub)
        sub.set_defaults(func=cmd_evaluate)

    an = subs.add_parser("analyze", help="diagnostic data files")
    an_subs = an.add_subparsers(dest="analysis", required=True)

    ratio = an_subs.add_parser("ratio-curve")
    ratio.add_argument("--manifest", help="reference feature manifest")
    ratio.add_argument("--query-manifest")
    ratio.add_argument("--per-query", type=int)
    ratio.add_argument("--k-max", type=int)
    ratio.add_argument("--out")
    _add_common(ratio)
    ratio.set_defaults(func=cmd_analyze_ratio_curve)

    heat = an_subs.add_parser("heatmap")
    heat.add_argument("--features")
    heat.add_argument("--models")
    heat.add_argument("--method", choices=METHODS)
    heat.add_argument("--index")
    heat.add_argument("--target-id")
    heat.add_argument("--out")
    _add_common(heat)
    heat.set_defaults(func=cmd_analyze_heatmap)

    norm = an_subs.add_parser("norm-subsample")
    norm.add_argument("--manifest")
    norm.add_argument("--ground-truth")
    norm.add_argument("--fraction", type=float)
    norm.add_argument("--seed", type=int)
    norm.add_argument("--out")
    _add_common(norm)
    norm.set_defaults(func=cmd_analyze_norm_subsample)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    outputs = []
    try:
        args = parser.parse_args(argv)
        args.func(args, outputs)
        return 0
    except UsageError as exc:
        _log(f"usage error: {exc}")
        _cleanup(outputs)
        return 1
    except ValueError as exc:
        _log(f"usage error: {exc}")
        _cleanup(outputs)
        return 1
    except NumericError as exc:
        _log(f"numeric failure: {exc}")
        _cleanup(outputs)
        return 3
    except SpocError as exc:
        _log(f"data error: {exc}")
        _cleanup(outputs)
        return 2


def _cleanup(outputs):
    for path in outputs:
        path = Path(path)
        if path.is_file():
            path.unlink()


if __name__ == "__main__":
    sys.exit(main())
