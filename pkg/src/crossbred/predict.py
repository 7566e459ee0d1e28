"""Prediction with a (possibly pruned) branch set.

Classification is a plain vote of the branches covering a sample, ties to the
lowest class index. Regression averages the leaf values of the covering
branches. A sample covered by no branch goes to the fallback decision.
"""

from __future__ import annotations

import csv
import itertools
import threading
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .branches import BranchSet
from .dataset import Dataset
from .forest import CLASSIFICATION, REGRESSION

RANDOM = "random"
MAJORITY = "majority"
CENTROID = "centroid"
FALLBACK_KINDS = (RANDOM, MAJORITY, CENTROID)


class PredictError(ValueError):
    pass


@dataclass(eq=False)
class FallbackPolicy:
    """Decision for samples no branch covers.

    ``random`` draws a class uniformly from a stream keyed by
    ``(seed, query ordinal)``; callers may pass the ordinal explicitly,
    otherwise an internal counter supplies it. ``majority`` returns the modal
    training class. ``centroid`` returns the class whose training feature mean
    is nearest in Euclidean distance.
    """

    kind: str
    n_classes: int
    seed: int = 0
    majority_label: int | None = None
    centroids: np.ndarray | None = None
    _counter: itertools.count = field(default_factory=itertools.count, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.kind not in FALLBACK_KINDS:
            raise PredictError(f"unknown fallback {self.kind!r}; expected one of {FALLBACK_KINDS}")
        if self.kind == MAJORITY and self.majority_label is None:
            raise PredictError("majority fallback needs the majority label")
        if self.kind == CENTROID:
            if self.centroids is None:
                raise PredictError("centroid fallback needs per-class centroids")
            c = np.asarray(self.centroids, dtype=np.float64)
            if c.ndim != 2 or c.shape[0] != self.n_classes or not np.all(np.isfinite(c)):
                raise PredictError("centroid fallback needs one finite vector per class")
            self.centroids = c

    def next_ordinal(self) -> int:
        with self._lock:
            return next(self._counter)

    def decide(self, x: np.ndarray, ordinal: int | None = None) -> int:
        if self.kind == MAJORITY:
            return int(self.majority_label)
        if self.kind == CENTROID:
            d2 = ((self.centroids - x) ** 2).sum(axis=1)
            return int(np.argmin(d2))
        if ordinal is None:
            ordinal = self.next_ordinal()
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(ordinal,)))
        return int(rng.integers(self.n_classes))


def build_fallback(d: Dataset, kind: str = CENTROID, seed: int = 0) -> FallbackPolicy:
    """Fit a fallback policy on labelled training data."""
    if d.n_samples == 0:
        raise PredictError("cannot build a fallback from an empty dataset")
    if not d.is_classification:
        raise PredictError("fallback policies are defined for classification")
    counts = np.bincount(d.labels, minlength=d.n_classes)
    majority = int(np.argmax(counts))
    if kind == CENTROID:
        centroids = np.empty((d.n_classes, d.n_features))
        overall = d.features.mean(axis=0)
        for c in range(d.n_classes):
            rows = d.labels == c
            # A class absent from training gets the global mean, so ties resolve to
            # the lowest index rather than to the absent class by accident.
            centroids[c] = d.features[rows].mean(axis=0) if counts[c] else overall
        return FallbackPolicy(CENTROID, d.n_classes, seed=seed, majority_label=majority, centroids=centroids)
    return FallbackPolicy(kind, d.n_classes, seed=seed, majority_label=majority)


class PredictionOutput(NamedTuple):
    label: int | float
    n_covering: int  # J'
    votes: np.ndarray | None
    used_fallback: bool


@dataclass(eq=False)
class CrfModel:
    """A branch set plus the fallback used when no branch covers a sample.

    ``target_mean`` is the regression fallback value.
    """

    branches: BranchSet
    fallback: FallbackPolicy | None = None
    target_mean: float | None = None

    def __post_init__(self):
        bad = [b for b in self.branches for p in b.predicates if not 0 <= p.feature < self.n_features]
        if bad:
            raise PredictError("branch predicate refers to a feature outside the model dimension")
        if self.task == CLASSIFICATION:
            if self.fallback is None:
                raise PredictError("classification model needs a fallback policy")
            if self.fallback.n_classes != self.n_classes:
                raise PredictError("fallback class count does not match the branches")
        elif self.target_mean is None:
            raise PredictError("regression model needs the training target mean")

    @property
    def task(self) -> str:
        return self.branches.task

    @property
    def n_features(self) -> int:
        return self.branches.n_features

    @property
    def n_classes(self) -> int:
        return self.branches.n_classes


def _as_sample(model: CrfModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.n_features:
        raise PredictError(f"expected a vector of {model.n_features} features, got shape {x.shape}")
    return x


def classify(model: CrfModel, x, ordinal: int | None = None) -> PredictionOutput:
    """Branch vote for one sample; fallback when no branch covers it."""
    if model.task != CLASSIFICATION:
        raise PredictError("classify needs a classification model; use regress")
    x = _as_sample(model, x)
    hit = model.branches.covering(x)
    n = int(np.count_nonzero(hit))
    votes = np.bincount(model.branches.leaf_labels[hit], minlength=model.n_classes)
    if n == 0:
        return PredictionOutput(model.fallback.decide(x, ordinal), 0, votes, True)
    return PredictionOutput(int(np.argmax(votes)), n, votes, False)


def regress(model: CrfModel, x) -> PredictionOutput:
    """Mean leaf value over covering branches; training mean when none covers."""
    if model.task != REGRESSION:
        raise PredictError("regress needs a regression model; use classify")
    x = _as_sample(model, x)
    hit = model.branches.covering(x)
    n = int(np.count_nonzero(hit))
    if n == 0:
        return PredictionOutput(float(model.target_mean), 0, None, True)
    return PredictionOutput(float(np.mean(model.branches.leaf_labels[hit])), n, None, False)


@dataclass
class BatchResult:
    predictions: np.ndarray
    n_covering: np.ndarray
    used_fallback: np.ndarray
    accuracy: float
    fallback_rate: float
    mean_covering: float

    def write_csv(self, actual: np.ndarray, path_or_file) -> None:
        """``row_index,predicted,actual,J_prime,used_fallback``."""
        own = not hasattr(path_or_file, "write")
        fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_index", "predicted", "actual", "J_prime", "used_fallback"])
            for i, (p, a, j, fb) in enumerate(zip(self.predictions, actual, self.n_covering, self.used_fallback)):
                w.writerow([i, _cell(p), _cell(a), int(j), int(bool(fb))])
        finally:
            if own:
                fh.close()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return int(v)


def predict_batch(model: CrfModel, X: np.ndarray, first_ordinal: int = 0):
    """Predictions, J' and fallback flags for every row of ``X``.

    Random fallback draws use ``first_ordinal + row index`` as the query
    ordinal, so batch output does not depend on earlier calls.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise PredictError(f"expected {model.n_features} features, got {X.shape[1]}")
    cover = model.branches.coverage_matrix(X)
    n_cov = cover.sum(axis=0)
    fallback = n_cov == 0
    labels = model.branches.leaf_labels
    if model.task == CLASSIFICATION:
        votes = np.zeros((X.shape[0], model.n_classes), dtype=np.int64)
        for c in range(model.n_classes):
            votes[:, c] = cover[labels == c].sum(axis=0)
        pred = np.argmax(votes, axis=1)
        for i in np.flatnonzero(fallback):
            pred[i] = model.fallback.decide(X[i], first_ordinal + int(i))
    else:
        pred = np.full(X.shape[0], float(model.target_mean))
        covered = np.flatnonzero(~fallback)
        for i in covered:
            pred[i] = float(np.mean(labels[cover[:, i]]))
    return pred, n_cov, fallback


def classify_batch(model: CrfModel, d: Dataset) -> BatchResult:
    """Classify every row of a labelled dataset and summarise."""
    if model.task != CLASSIFICATION:
        raise PredictError("classify_batch needs a classification model")
    pred, n_cov, fallback = predict_batch(model, d.features)
    n = max(d.n_samples, 1)
    return BatchResult(
        predictions=pred,
        n_covering=n_cov,
        used_fallback=fallback,
        accuracy=float(np.count_nonzero(pred == d.labels) / n),
        fallback_rate=float(np.count_nonzero(fallback) / n),
        mean_covering=float(n_cov.mean()) if d.n_samples else 0.0,
    )
