"""Train / prune / evaluate helpers and the tree-count sweep.

Everything here is deterministic given its seeds. One user-facing seed is
expanded into independent seeds for data generation, splitting and forest
growth by :func:`derive_seeds`.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .branches import (
    ACCURACY,
    FULL_TRAINING_SET,
    PruneCriterion,
    crossbreed_prune,
    decompose_to_branches,
    evaluate_branch_stats,
)
from .dataset import Dataset, SyntheticSpec, generate_synthetic, train_test_split
from .forest import (
    Forest,
    ForestConfig,
    apply_tree,
    count_nodes,
    fit_forest,
    predict_forest,
    predict_forest_batch,
)
from .modelfile import ModelFile
from .predict import CENTROID, build_fallback, classify, classify_batch

log = logging.getLogger(__name__)


class Seeds(NamedTuple):
    data: int
    split: int
    forest: int


def derive_seeds(seed: int) -> Seeds:
    """Three independent 64-bit seeds from one user seed."""
    children = np.random.SeedSequence(seed).spawn(3)
    return Seeds(*(int(c.generate_state(1, np.uint64)[0]) for c in children))


def train_model(
    train: Dataset,
    config: ForestConfig,
    scope: str = FULL_TRAINING_SET,
    fallback: str = CENTROID,
    fallback_seed: int = 0,
    n_workers: int = 1,
    forest: Forest | None = None,
) -> ModelFile:
    """Fit (or reuse ``forest``), decompose, score branches and build the fallback."""
    if forest is None:
        forest = fit_forest(train, config, n_workers=n_workers)
    bs = evaluate_branch_stats(decompose_to_branches(forest), train, scope)
    if train.is_classification:
        return ModelFile(forest, bs, build_fallback(train, fallback, seed=fallback_seed))
    return ModelFile(forest, bs, None, target_mean=float(np.mean(train.labels)))


def prune_model(m: ModelFile, criterion: PruneCriterion) -> ModelFile:
    return replace(m, branches=crossbreed_prune(m.branches, criterion))


def rf_accuracy(forest: Forest, d: Dataset) -> float:
    return float(np.mean(predict_forest_batch(forest, d.features) == d.labels))


def rf_regression_rmse(forest: Forest, d: Dataset) -> float:
    preds = np.mean([apply_tree(t, d.features) for t in forest.trees], axis=0)
    return float(np.sqrt(np.mean((preds - d.labels) ** 2)))


def rf_size(forest: Forest) -> int:
    """Stored node count of the baseline forest."""
    return sum(count_nodes(t) for t in forest.trees)


def mean_predict_seconds(fn, X: np.ndarray) -> float:
    """Mean wall time of ``fn(x)`` over single rows of ``X``."""
    if X.shape[0] == 0:
        return 0.0
    start = time.perf_counter()
    for x in X:
        fn(x)
    return (time.perf_counter() - start) / X.shape[0]


@dataclass
class EvalMetrics:
    n_rows: int
    accuracy: float
    fallback_rate: float
    mean_j_prime: float
    rf_accuracy: float
    n_branches: int
    n_predicates: int
    rf_nodes: int
    crf_predict_s: float | None = None
    rf_predict_s: float | None = None


def evaluate_model(m: ModelFile, test: Dataset, timing: bool = False):
    """CRF vs baseline forest on labelled classification data."""
    model = m.model
    batch = classify_batch(model, test)
    metrics = EvalMetrics(
        n_rows=test.n_samples,
        accuracy=batch.accuracy,
        fallback_rate=batch.fallback_rate,
        mean_j_prime=batch.mean_covering,
        rf_accuracy=rf_accuracy(m.forest, test),
        n_branches=len(m.branches),
        n_predicates=m.branches.n_predicates,
        rf_nodes=rf_size(m.forest),
    )
    if timing:
        metrics.crf_predict_s = mean_predict_seconds(lambda x: classify(model, x), test.features)
        metrics.rf_predict_s = mean_predict_seconds(lambda x: predict_forest(m.forest, x), test.features)
    return metrics, batch


# -- sweep -------------------------------------------------------------------

DEFAULT_TREE_COUNTS = (1, 10, 20, 30, 40, 50)
DEFAULT_CLUSTERS = (1, 5, 10)


@dataclass(frozen=True)
class SweepSpec:
    """Grid of (clusters, tree count, criterion, threshold, seed) cells."""

    tree_counts: tuple = DEFAULT_TREE_COUNTS
    clusters_per_class: tuple = DEFAULT_CLUSTERS
    base: SyntheticSpec = field(default_factory=SyntheticSpec)
    criteria: tuple = (ACCURACY,)
    thresholds: tuple = (0.9,)
    repetitions: int = 1
    seed: int = 0
    train_fraction: float = 0.75
    scope: str = FULL_TRAINING_SET
    fallback: str = CENTROID
    mtry: int | None = None
    min_leaf_size: int = 1
    max_depth: int | None = None

    def __post_init__(self):
        for name in ("tree_counts", "clusters_per_class", "criteria", "thresholds"):
            if not getattr(self, name):
                raise ValueError(f"sweep {name} must be nonempty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        for c in self.criteria:
            for t in self.thresholds:
                PruneCriterion(c, t)

    @property
    def seeds(self) -> tuple:
        return tuple(self.seed + r for r in range(self.repetitions))

    def cells(self) -> list[tuple]:
        return [
            (c, j, crit, tau, s)
            for c in self.clusters_per_class
            for j in self.tree_counts
            for crit in self.criteria
            for tau in self.thresholds
            for s in self.seeds
        ]


REPORT_COLUMNS = [
    "clusters", "n_trees", "criterion", "tau", "seed", "status",
    "rf_accuracy", "crf_accuracy", "branches_before", "branches_after",
    "predicates_before", "predicates_after", "rf_nodes", "fallback_rate", "mean_j_prime",
]
TIMING_COLUMNS = ["rf_predict_us", "crf_predict_us"]


def _run_unit(spec: SweepSpec, clusters: int, seed: int, timing: bool) -> dict:
    """All cells sharing one dataset: one forest of the largest size, reused by prefix."""
    rows: dict[tuple, dict] = {}
    keys = [(clusters, j, crit, tau, seed) for j in spec.tree_counts for crit in spec.criteria for tau in spec.thresholds]
    try:
        seeds = derive_seeds(seed)
        data = generate_synthetic(replace(spec.base, n_clusters_per_class=clusters, seed=seeds.data))
        train, test = train_test_split(data, spec.train_fraction, seeds.split)
        config = ForestConfig(
            n_trees=max(spec.tree_counts),
            mtry=spec.mtry,
            min_leaf_size=spec.min_leaf_size,
            max_depth=spec.max_depth,
            seed=seeds.forest,
        )
        full = fit_forest(train, config)
    except Exception as e:  # isolate failures per cell
        log.warning("sweep unit clusters=%s seed=%s failed: %s", clusters, seed, e)
        return {k: {"status": f"error: {e}"} for k in keys}

    for j in spec.tree_counts:
        try:
            forest = full.head(j)
            m = train_model(train, forest.config, spec.scope, spec.fallback, seeds.forest, forest=forest)
            rf_acc = rf_accuracy(forest, test)
            rf_us = None
            if timing:
                rf_us = 1e6 * mean_predict_seconds(lambda x: predict_forest(forest, x), test.features)
        except Exception as e:
            for crit in spec.criteria:
                for tau in spec.thresholds:
                    rows[(clusters, j, crit, tau, seed)] = {"status": f"error: {e}"}
            continue
        for crit in spec.criteria:
            for tau in spec.thresholds:
                key = (clusters, j, crit, tau, seed)
                try:
                    pruned = prune_model(m, PruneCriterion(crit, tau))
                    batch = classify_batch(pruned.model, test)
                    row = {
                        "status": "ok",
                        "rf_accuracy": rf_acc,
                        "crf_accuracy": batch.accuracy,
                        "branches_before": len(m.branches),
                        "branches_after": len(pruned.branches),
                        "predicates_before": m.branches.n_predicates,
                        "predicates_after": pruned.branches.n_predicates,
                        "rf_nodes": rf_size(forest),
                        "fallback_rate": batch.fallback_rate,
                        "mean_j_prime": batch.mean_covering,
                    }
                    if timing:
                        model = pruned.model
                        row["rf_predict_us"] = rf_us
                        row["crf_predict_us"] = 1e6 * mean_predict_seconds(lambda x: classify(model, x), test.features)
                    rows[key] = row
                except Exception as e:
                    rows[key] = {"status": f"error: {e}"}
    return rows


def _run_unit_star(args):
    return _run_unit(*args)


@dataclass
class SweepReport:
    rows: list[dict]
    timing: bool = False

    @property
    def failed(self) -> int:
        return sum(1 for r in self.rows if r["status"] != "ok")

    @property
    def columns(self) -> list[str]:
        return REPORT_COLUMNS + (TIMING_COLUMNS if self.timing else [])

    def write_csv(self, path_or_file) -> None:
        own = not hasattr(path_or_file, "write")
        fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([_cell(r.get(c)) for c in self.columns])
        finally:
            if own:
                fh.close()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_sweep(spec: SweepSpec, n_workers: int = 1, timing: bool = False) -> SweepReport:
    """Evaluate baseline forest vs pruned branch model on every cell of ``spec``.

    Rows come out in :meth:`SweepSpec.cells` order regardless of worker count.
    Timing columns are wall-clock measurements and therefore only added on
    request; without them the report is bit-reproducible.
    """
    units = [(spec, c, s, timing) for c in spec.clusters_per_class for s in spec.seeds]
    if n_workers > 1 and len(units) > 1:
        workers = min(n_workers, len(units))
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_run_unit_star, units))
    else:
        results = [_run_unit(*u) for u in units]
    merged: dict[tuple, dict] = {}
    for r in results:
        merged.update(r)
    rows = []
    for key in spec.cells():
        c, j, crit, tau, s = key
        row = {"clusters": c, "n_trees": j, "criterion": crit, "tau": float(tau), "seed": s}
        row.update(merged.get(key, {"status": "error: cell not produced"}))
        rows.append(row)
    return SweepReport(rows, timing=timing)
