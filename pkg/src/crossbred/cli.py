"""Command-line interface: ``crossbred train|prune|eval|hist|sweep|summary|dump``."""

from __future__ import annotations

import sys
import time
from dataclasses import replace
from datetime import datetime, timezone

import click
import numpy as np

from . import __version__
from .branches import (
    ACCURACY,
    FULL_TRAINING_SET,
    IMPACT,
    SCOPES,
    BranchError,
    PruneCriterion,
    branch_histogram,
    evaluate_branch_stats,
    write_branch_dump,
    write_histogram,
)
from .dataset import (
    CLASSIFICATION,
    REGRESSION,
    SyntheticSpec,
    feature_summary,
    generate_synthetic,
    load_csv,
    merge_classes,
    train_test_split,
    write_feature_summary,
)
from .forest import ForestConfig
from .modelfile import ModelFileError, load_model, save_model
from .pipeline import (
    DEFAULT_CLUSTERS,
    DEFAULT_TREE_COUNTS,
    SweepSpec,
    derive_seeds,
    evaluate_model,
    prune_model,
    rf_regression_rmse,
    run_sweep,
    train_model,
)
from .predict import CENTROID, FALLBACK_KINDS, BatchResult, PredictError, predict_batch


class StageError(click.ClickException):
    """Failure attributed to one pipeline stage; exits with status 1."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class _stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None or isinstance(exc, click.ClickException):
            return False
        if isinstance(exc, (OSError, ValueError, KeyError)):
            raise StageError(self.name, str(exc)) from exc
        return False


def _int_list(text: str | None) -> list[int]:
    if not text:
        return []
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected a comma-separated list of integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected a comma-separated list of numbers, got {text!r}") from None


def data_options(f):
    opts = [
        click.option("--csv", "csv_path", type=click.Path(dir_okay=False), help="Input CSV file."),
        click.option("--label-col", type=int, default=-1, show_default=True, help="Label column index (negative counts from the end)."),
        click.option("--header/--no-header", default=False, show_default=True, help="CSV has a header line."),
        click.option("--ignore-cols", default="", help="Comma-separated column indices to drop."),
        click.option("--merge-positive", default="", help="Original label values merged into class 1; all others become class 0."),
        click.option("--synthetic", default=None, help="n_samples,n_features,n_informative,n_classes[,n_clusters]."),
        click.option("--task", type=click.Choice([CLASSIFICATION, REGRESSION]), default=CLASSIFICATION, show_default=True),
        click.option("--train-fraction", type=float, default=0.75, show_default=True, help="Training share of a seeded stratified split; 1 uses every row."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _load_data(csv_path, label_col, header, ignore_cols, merge_positive, synthetic, task, data_seed):
    with _stage("ingestion"):
        if bool(csv_path) == bool(synthetic):
            raise StageError("ingestion", "give exactly one of --csv or --synthetic")
        if synthetic:
            d = generate_synthetic(SyntheticSpec.parse(synthetic, seed=data_seed))
        else:
            d = load_csv(csv_path, label_column=label_col, has_header=header,
                         ignore_columns=_int_list(ignore_cols), task=task)
        positive = _int_list(merge_positive)
        if positive:
            lookup = {v: i for i, v in enumerate(d.class_values)}
            missing = [v for v in positive if v not in lookup]
            if missing:
                raise StageError("ingestion", f"--merge-positive labels {missing} not present in data")
            d = merge_classes(d, [lookup[v] for v in positive])
    return d


def _split(d, train_fraction, split_seed):
    with _stage("splitting"):
        if not 0.0 < train_fraction <= 1.0:
            raise StageError("splitting", f"--train-fraction must lie in (0, 1], got {train_fraction}")
        if train_fraction == 1.0:
            return d, None
        return train_test_split(d, train_fraction, split_seed)


def _load(path):
    with _stage("io"):
        try:
            return load_model(path)
        except ModelFileError as e:
            raise StageError("io", f"{path}: {e}") from e


def _save(m, path):
    with _stage("io"):
        save_model(m, path)


@click.group()
@click.version_option(__version__, prog_name="crossbred")
def main():
    """Random forests decomposed into branches and pruned by branch quality."""


@main.command()
@data_options
@click.option("--trees", "n_trees", type=int, default=50, show_default=True)
@click.option("--mtry", type=int, default=None, help="Features tried per split [default: floor(sqrt(p))].")
@click.option("--min-leaf", type=int, default=1, show_default=True, help="Nodes with fewer rows are not split.")
@click.option("--max-depth", type=int, default=None)
@click.option("--scope", type=click.Choice(SCOPES), default=FULL_TRAINING_SET, show_default=True, help="Rows used for branch statistics.")
@click.option("--fallback", type=click.Choice(FALLBACK_KINDS), default=CENTROID, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--record-time", is_flag=True, help="Store wall-clock timestamps in the provenance (makes files non-reproducible).")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def train(csv_path, label_col, header, ignore_cols, merge_positive, synthetic, task, train_fraction,
          n_trees, mtry, min_leaf, max_depth, scope, fallback, seed, workers, record_time, out):
    """Fit a forest, decompose it into scored branches and write a model file."""
    seeds = derive_seeds(seed)
    d = _load_data(csv_path, label_col, header, ignore_cols, merge_positive, synthetic, task, seeds.data)
    train_d, _ = _split(d, train_fraction, seeds.split)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    with _stage("training"):
        config = ForestConfig(n_trees=n_trees, mtry=mtry, min_leaf_size=min_leaf, max_depth=max_depth,
                              task=task, seed=seeds.forest)
        m = train_model(train_d, config, scope, fallback, fallback_seed=seeds.forest, n_workers=workers)
    elapsed = time.perf_counter() - t0
    m.provenance = {
        "dataset_fingerprint": d.fingerprint(),
        "train_fingerprint": train_d.fingerprint(),
        "seed": seed,
        "train_fraction": train_fraction,
        "source": {"csv": csv_path, "synthetic": synthetic, "label_col": label_col, "header": header,
                   "ignore_cols": ignore_cols, "merge_positive": merge_positive},
        "timestamps": {"started": started.isoformat(), "finished": datetime.now(timezone.utc).isoformat()}
        if record_time else None,
    }
    _save(m, out)
    click.echo(f"trees: {len(m.forest.trees)}")
    click.echo(f"branches: {len(m.branches)}")
    click.echo(f"train rows: {train_d.n_samples}")
    click.echo(f"fit seconds: {elapsed:.3f}")


@main.command()
@click.argument("model", type=click.Path(dir_okay=False))
@click.option("--criterion", type=click.Choice([ACCURACY, IMPACT]), default=ACCURACY, show_default=True)
@click.option("--tau", type=float, required=True, help="Keep branches whose criterion value is >= tau.")
@click.option("--scope", type=click.Choice(SCOPES), default=None, help="Re-score branches under this scope first (needs the training data flags).")
@data_options
@click.option("--seed", type=int, default=None, help="Seed for reproducing the training split [default: the model's].")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def prune(model, criterion, tau, scope, csv_path, label_col, header, ignore_cols, merge_positive,
          synthetic, task, train_fraction, seed, out):
    """Prune a model's branches by accuracy or impact factor."""
    if not 0.0 <= tau <= 1.0:
        raise StageError("pruning", f"--tau must lie in [0, 1], got {tau}")
    m = _load(model)
    if scope is not None and scope != m.branches.evaluation_scope:
        if seed is None:
            seed = m.provenance.get("seed", 0)
        seeds = derive_seeds(seed)
        d = _load_data(csv_path, label_col, header, ignore_cols, merge_positive, synthetic, task, seeds.data)
        train_d, _ = _split(d, train_fraction, seeds.split)
        with _stage("evaluation"):
            m = replace(m, branches=evaluate_branch_stats(m.branches, train_d, scope))
    with _stage("pruning"):
        try:
            pruned = prune_model(m, PruneCriterion(criterion, tau))
        except BranchError as e:
            raise StageError("pruning", str(e)) from e
    _save(pruned, out)
    click.echo(f"surviving branches: {len(pruned.branches)} / {len(m.branches)}")


@main.command("eval")
@click.argument("model", type=click.Path(dir_okay=False))
@data_options
@click.option("--part", type=click.Choice(["test", "train", "all"]), default="test", show_default=True)
@click.option("--seed", type=int, default=None, help="Seed for reproducing the split [default: the model's].")
@click.option("--timing/--no-timing", default=True, show_default=True, help="Measure single-input prediction time.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Per-row predictions CSV.")
@click.option("--metrics-out", type=click.Path(dir_okay=False), default=None, help="One-row metrics CSV.")
def eval_cmd(model, csv_path, label_col, header, ignore_cols, merge_positive, synthetic, task,
             train_fraction, part, seed, timing, out, metrics_out):
    """Evaluate a model (and its baseline forest) on labelled data."""
    m = _load(model)
    if seed is None:
        seed = m.provenance.get("seed", 0)
    seeds = derive_seeds(seed)
    d = _load_data(csv_path, label_col, header, ignore_cols, merge_positive, synthetic, task, seeds.data)
    if part != "all" and train_fraction < 1.0:
        pair = _split(d, train_fraction, seeds.split)
        d = pair.test if part == "test" else pair.train
    with _stage("evaluation"):
        if d.n_features != m.branches.n_features:
            raise StageError("evaluation", f"data has {d.n_features} features, model expects {m.branches.n_features}")
        if m.branches.task != d.task:
            raise StageError("evaluation", f"model task {m.branches.task!r} does not match data task {d.task!r}")
        if d.task == REGRESSION:
            _eval_regression(m, d, out)
            return
        try:
            metrics, batch = evaluate_model(m, d, timing=timing)
        except PredictError as e:
            raise StageError("evaluation", str(e)) from e
    rows = [
        ("rows", metrics.n_rows),
        ("accuracy", metrics.accuracy),
        ("rf_accuracy", metrics.rf_accuracy),
        ("fallback_rate", metrics.fallback_rate),
        ("mean_j_prime", metrics.mean_j_prime),
        ("branches", metrics.n_branches),
        ("predicates", metrics.n_predicates),
        ("rf_nodes", metrics.rf_nodes),
    ]
    if timing:
        rows += [("crf_predict_us", 1e6 * metrics.crf_predict_s), ("rf_predict_us", 1e6 * metrics.rf_predict_s)]
    for k, v in rows:
        click.echo(f"{k}: {v:.6g}" if isinstance(v, float) else f"{k}: {v}")
    with _stage("io"):
        if out:
            batch.write_csv(d.labels, out)
        if metrics_out:
            with open(metrics_out, "w", encoding="utf-8") as fh:
                fh.write(",".join(k for k, _ in rows) + "\n")
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for _, v in rows) + "\n")


def _eval_regression(m, d, out):
    pred, n_cov, fallback = predict_batch(m.model, d.features)
    rmse = float(np.sqrt(np.mean((pred - d.labels) ** 2)))
    click.echo(f"rows: {d.n_samples}")
    click.echo(f"rmse: {rmse:.6g}")
    click.echo(f"rf_rmse: {rf_regression_rmse(m.forest, d):.6g}")
    click.echo(f"fallback_rate: {float(np.mean(fallback)):.6g}")
    if out:
        BatchResult(pred, n_cov, fallback, float("nan"), float(np.mean(fallback)), float(n_cov.mean())).write_csv(d.labels, out)


@main.command()
@click.argument("model", type=click.Path(dir_okay=False))
@click.option("--metric", type=click.Choice([ACCURACY, IMPACT]), default=ACCURACY, show_default=True)
@click.option("--bins", type=int, default=10, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV path [default: stdout].")
def hist(model, metric, bins, out):
    """Histogram of branch accuracy or impact factor as ``bin_low,bin_high,count``."""
    m = _load(model)
    with _stage("histogram"):
        try:
            h = branch_histogram(m.branches, metric, bins)
        except BranchError as e:
            raise StageError("histogram", str(e)) from e
    with _stage("io"):
        write_histogram(h, out if out else sys.stdout)


@main.command()
@click.argument("model", type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV path [default: stdout].")
def dump(model, out):
    """Per-branch statistics as CSV."""
    m = _load(model)
    with _stage("io"):
        write_branch_dump(m.branches, out if out else sys.stdout)


@main.command()
@data_options
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV path [default: stdout].")
def summary(csv_path, label_col, header, ignore_cols, merge_positive, synthetic, task, train_fraction, seed, out):
    """Per-feature mean and standard deviation of a dataset."""
    d = _load_data(csv_path, label_col, header, ignore_cols, merge_positive, synthetic, task, derive_seeds(seed).data)
    with _stage("summary"):
        stats = feature_summary(d)
    with _stage("io"):
        write_feature_summary(stats, out if out else sys.stdout)


@main.command()
@click.option("--tree-counts", default=",".join(map(str, DEFAULT_TREE_COUNTS)), show_default=True)
@click.option("--clusters", default=",".join(map(str, DEFAULT_CLUSTERS)), show_default=True, help="Clusters per class.")
@click.option("--synthetic", default="1000,20,10,2", show_default=True, help="Base n_samples,n_features,n_informative,n_classes.")
@click.option("--criteria", default=ACCURACY, show_default=True, help="Comma-separated: accuracy,impact.")
@click.option("--taus", default="0.9", show_default=True, help="Comma-separated thresholds.")
@click.option("--repetitions", type=int, default=1, show_default=True)
@click.option("--train-fraction", type=float, default=0.75, show_default=True)
@click.option("--mtry", type=int, default=None)
@click.option("--min-leaf", type=int, default=1, show_default=True)
@click.option("--max-depth", type=int, default=None)
@click.option("--scope", type=click.Choice(SCOPES), default=FULL_TRAINING_SET, show_default=True)
@click.option("--fallback", type=click.Choice(FALLBACK_KINDS), default=CENTROID, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--timing", is_flag=True, help="Add wall-clock prediction timing columns (not reproducible).")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Report CSV [default: stdout].")
def sweep(tree_counts, clusters, synthetic, criteria, taus, repetitions, train_fraction, mtry, min_leaf,
          max_depth, scope, fallback, seed, workers, timing, out):
    """Baseline forest vs pruned branch model over a grid of synthetic settings."""
    with _stage("configuration"):
        base = SyntheticSpec.parse(synthetic)
        spec = SweepSpec(
            tree_counts=tuple(_int_list(tree_counts)),
            clusters_per_class=tuple(_int_list(clusters)),
            base=base,
            criteria=tuple(c.strip() for c in criteria.split(",") if c.strip()),
            thresholds=tuple(_float_list(taus)),
            repetitions=repetitions,
            seed=seed,
            train_fraction=train_fraction,
            scope=scope,
            fallback=fallback,
            mtry=mtry,
            min_leaf_size=min_leaf,
            max_depth=max_depth,
        )
    report = run_sweep(spec, n_workers=workers, timing=timing)
    with _stage("io"):
        report.write_csv(out if out else sys.stdout)
    if out:
        click.echo(f"cells: {len(report.rows)}, failed: {report.failed}")
    if report.failed:
        raise StageError("sweep", f"{report.failed} of {len(report.rows)} cells failed")


if __name__ == "__main__":
    main()
