"""Command-line front door: bank tooling, batch classification, evaluation,
study planning, trial-log analytics, and the HTTP service."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from .explain import build_explanation, serialize_explanation
from .metrics import evaluate_topk
from .pipeline import METHODS, ClassifierConfig, make_classifier
from .planning import (PROFILES, PredictionRecord, build_plan, load_plan,
                       save_plan)
from .rerank import (FileCorrespondenceSource, load_keypoints,
                     write_rerank_requests)
from .knn import rank_gallery
from .service import DATA_DIR_ENV, create_app
from .store import (Dims, FeatureRecord, load_feature_bank, load_manifest,
                    validate_manifest, write_feature_bank)
from .teams import load_trial_log, mann_whitney_u, threshold_sweep

CLI_METHODS = {m.replace("_", "-"): m for m in METHODS}


@click.group()
def main():
    """Exemplar-based classification with correspondence re-ranking."""


@main.group()
def bank():
    """Feature-bank files."""


@bank.command("write")
@click.option("--from-npz", "npz_path", required=True, type=click.Path(exists=True),
              help="npz with image_ids, class_ids, globals, patches arrays")
@click.option("--out", "out_path", required=True, type=click.Path())
def bank_write(npz_path, out_path):
    """Pack arrays from an .npz archive into a feature-bank file."""
    data = np.load(npz_path, allow_pickle=False)
    ids = [str(x) for x in data["image_ids"]]
    class_ids = data["class_ids"].astype(int)
    globals_mat = data["globals"]
    patches = data["patches"]
    records = [FeatureRecord(image_id=iid, class_id=int(c), global_vec=g, patches=p)
               for iid, c, g, p in zip(ids, class_ids, globals_mat, patches)]
    dims = Dims(globals_mat.shape[1], patches.shape[3], patches.shape[1])
    write_feature_bank(records, dims, out_path)
    click.echo(f"wrote {len(records)} records to {out_path}")


@bank.command("inspect")
@click.argument("path", type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True),
              help="also validate this manifest against the bank")
def bank_inspect(path, manifest_path):
    """Print bank geometry and record counts."""
    index = load_feature_bank(path)
    d = index.dims
    click.echo(f"records={len(index)} d_g={d.d_g} d_p={d.d_p} grid={d.g}x{d.g}")
    classes = sorted({r.class_id for r in index.records})
    click.echo(f"classes={len(classes)}")
    for r in index.records[:5]:
        click.echo(f"  {r.image_id} class={r.class_id}")
    if manifest_path:
        report = validate_manifest(load_manifest(manifest_path), index)
        click.echo(f"manifest: issues={report.issue_count} "
                   f"excluded={report.excluded_count} splits={report.split_counts}")


def _method_option(fn):
    return click.option("--method", type=click.Choice(sorted(CLI_METHODS)),
                        default="knn", show_default=True)(fn)


def _classifier_options(fn):
    for deco in (
        click.option("--k", default=20, show_default=True),
        click.option("--shortlist", "-N", "shortlist", default=50, show_default=True),
        click.option("--pairs", "-L", "pairs", default=5, show_default=True),
        click.option("--epsilon", default=0.05, show_default=True),
        click.option("--iterations", default=100, show_default=True),
        click.option("--weighting", type=click.Choice(["cc", "uniform"]), default="cc",
                     show_default=True),
        click.option("--threshold", default=0.55, show_default=True),
        click.option("--exclude-self", is_flag=True),
        click.option("--correspondences", "corr_path", type=click.Path(exists=True),
                     help="CXCM file for the map-based classifiers"),
        click.option("--keypoints", "keypoints_path", type=click.Path(exists=True)),
    ):
        fn = deco(fn)
    return fn


def _build(index, method, k, shortlist, pairs, epsilon, iterations, weighting,
           threshold, exclude_self, corr_path, keypoints_path):
    config = ClassifierConfig(
        method=CLI_METHODS[method], k=k, N=shortlist, L=pairs, epsilon=epsilon,
        iterations=iterations, weighting=weighting, threshold=threshold,
        exclude_self=exclude_self)
    corr_source = FileCorrespondenceSource.from_file(corr_path) if corr_path else None
    keypoints = load_keypoints(keypoints_path) if keypoints_path else None
    return config, make_classifier(index, config, corr_source=corr_source,
                                   keypoints=keypoints)


@main.command()
@click.option("--gallery", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True),
              help="marks predictions correct/incorrect for planning")
@click.option("--out", "out_path", type=click.Path(), help="predictions JSONL")
@_method_option
@_classifier_options
def classify(gallery, queries, manifest_path, out_path, method, **kwargs):
    """Classify every query and emit predictions with explanations."""
    index = load_feature_bank(gallery)
    query_index = load_feature_bank(queries)
    config, classifier = _build(index, method, **kwargs)
    groundtruth = {}
    query_records = list(query_index.records)
    if manifest_path:
        manifest = load_manifest(manifest_path)
        groundtruth = {e.image_id: e.groundtruth_labels for e in manifest.active()}
        query_records = [r for r in query_records if r.image_id in groundtruth]
    out = open(out_path, "w", encoding="utf-8") if out_path else sys.stdout
    try:
        for record in query_records:
            prediction, rerank = classifier(record)
            explanation = build_explanation(
                prediction, rerank=rerank, query_id=record.image_id,
                class_names=index.class_names, grid=index.dims.g)
            doc = {
                "query_id": record.image_id,
                "method": prediction.method,
                "label": prediction.label,
                "label_name": index.class_name(prediction.label),
                "confidence_count": prediction.confidence_count,
                "k": prediction.k,
                "ai_correct": (prediction.label in groundtruth[record.image_id]
                               if groundtruth else None),
                "explanation": json.loads(serialize_explanation(explanation)),
            }
            out.write(json.dumps(doc, ensure_ascii=False) + "\n")
    finally:
        if out_path:
            out.close()
    if out_path:
        click.echo(f"wrote {len(query_records)} predictions to {out_path}")


@main.command()
@click.option("--gallery", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--csv", "csv_path", type=click.Path(), help="per-query outcomes CSV")
@_method_option
@_classifier_options
def evaluate(gallery, queries, manifest_path, csv_path, method, **kwargs):
    """Top-1 accuracy of one classifier over a manifest."""
    index = load_feature_bank(gallery)
    query_index = load_feature_bank(queries)
    manifest = load_manifest(manifest_path)
    config, classifier = _build(index, method, **kwargs)
    report = evaluate_topk(manifest, classifier, config.method, query_index)
    click.echo(report.summary())
    if csv_path:
        Path(csv_path).write_text(report.to_csv(), encoding="utf-8")
        click.echo(f"wrote {csv_path}")


@main.command("rerank-requests")
@click.option("--gallery", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--shortlist", "-N", "shortlist", default=50, show_default=True)
@click.option("--exclude-self", is_flag=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def rerank_requests(gallery, queries, shortlist, exclude_self, out_path):
    """Emit (query, candidate) pairs needing correspondence maps."""
    index = load_feature_bank(gallery)
    query_index = load_feature_bank(queries)
    pairs = []
    for record in query_index.records:
        ranked = rank_gallery(record, index, exclude_self=exclude_self)
        pairs.extend((record.image_id, n.image_id) for n in ranked[:shortlist])
    write_rerank_requests(pairs, out_path)
    click.echo(f"wrote {len(pairs)} pairs to {out_path}")


@main.command()
@click.option("--study-id", required=True)
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--predictions", "prediction_paths", multiple=True, required=True,
              type=click.Path(exists=True), help="JSONL from `classify` (repeatable)")
@click.option("--profile", type=click.Choice(sorted(PROFILES)), default="imagenet",
              show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--pool-correct", default=300, show_default=True)
@click.option("--pool-incorrect", default=300, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def plan(study_id, manifest_path, prediction_paths, profile, seed,
         pool_correct, pool_incorrect, out_path):
    """Freeze a study plan from classifier predictions."""
    manifest = load_manifest(manifest_path)
    records = []
    for path in prediction_paths:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = PredictionRecord.from_json(line)
                    if rec.ai_correct is None:
                        raise click.ClickException(
                            f"{path}: predictions lack correctness; run classify "
                            "with --manifest")
                    records.append(rec)
    study = build_plan(study_id, manifest, records, PROFILES[profile], seed,
                       test_pool_correct=pool_correct,
                       test_pool_incorrect=pool_incorrect)
    save_plan(study, out_path)
    methods = ", ".join(study.methods)
    click.echo(f"plan {study_id}: methods [{methods}] -> {out_path}")


@main.command()
@click.option("--log", "log_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), help="sweep CSV")
def sweep(log_path, out_path):
    """Confidence-threshold sweep of team accuracy over a trial log."""
    table = threshold_sweep(load_trial_log(log_path))
    csv = table.to_csv()
    if out_path:
        Path(out_path).write_text(csv, encoding="utf-8")
        click.echo(f"wrote {out_path}")
    else:
        click.echo(csv, nl=False)
    if table.optimal is not None:
        click.echo(f"optimal T*={table.optimal.threshold:.2f} "
                   f"team={table.optimal.team_accuracy:.2f}")


@main.group()
def stats():
    """Statistical tests."""


@stats.command("mannwhitney")
@click.argument("sample_a", type=click.Path(exists=True))
@click.argument("sample_b", type=click.Path(exists=True))
def stats_mannwhitney(sample_a, sample_b):
    """Two-sided Mann-Whitney U test over two files of numbers."""
    a = [float(x) for x in Path(sample_a).read_text().split()]
    b = [float(x) for x in Path(sample_b).read_text().split()]
    u, p = mann_whitney_u(a, b)
    click.echo(f"U={u:g} p={p:.6g} (n={len(a)}, m={len(b)})")


@main.command()
@click.option("--data-dir", default=None, help=f"defaults to ${DATA_DIR_ENV}")
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(data_dir, port, host):
    """Run the study HTTP service."""
    import uvicorn

    app = create_app(data_dir or os.environ.get(DATA_DIR_ENV, "."))
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
