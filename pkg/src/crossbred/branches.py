"""Root-to-leaf branches of a forest, their statistics, and crossbreed pruning.

A branch is the conjunction of the split tests on the path from a tree's root
to one leaf, together with that leaf's label. Branches are scored on the rows
they cover: ``k`` rows covered, ``acc`` the fraction of those whose label is
the leaf label, and ``impact = acc * k / N``. Pruning keeps the branches whose
score reaches a threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .dataset import Dataset
from .forest import CLASSIFICATION, Forest, Internal, Leaf

LE = "le"
GT = "gt"

FULL_TRAINING_SET = "full"
OWN_BOOTSTRAP = "bootstrap"
SCOPES = (FULL_TRAINING_SET, OWN_BOOTSTRAP)

ACCURACY = "accuracy"
IMPACT = "impact"
METRICS = (ACCURACY, IMPACT)


class BranchError(ValueError):
    pass


class SplitPredicate(NamedTuple):
    feature: int
    threshold: float
    side: str  # LE: x[feature] <= threshold, GT: x[feature] > threshold

    def holds(self, x) -> bool:
        v = x[self.feature]
        return v <= self.threshold if self.side == LE else v > self.threshold


@dataclass(frozen=True)
class Branch:
    tree_index: int
    leaf_index: int
    predicates: tuple
    leaf_label: int | float
    k: int | None = None
    acc: float | None = None
    impact: float | None = None

    @property
    def evaluated(self) -> bool:
        return self.k is not None and self.acc is not None and self.impact is not None

    @property
    def uncovered(self) -> bool:
        return self.k == 0

    @property
    def n_predicates(self) -> int:
        return len(self.predicates)

    def mask(self, X: np.ndarray) -> np.ndarray:
        """Boolean coverage of every row of ``X``."""
        m = np.ones(X.shape[0], dtype=bool)
        for f, t, side in self.predicates:
            m &= (X[:, f] <= t) if side == LE else (X[:, f] > t)
        return m

    def metric(self, name: str) -> float:
        if not self.evaluated:
            raise BranchError(f"branch {self.tree_index}/{self.leaf_index} has no statistics yet")
        if name == ACCURACY:
            return self.acc
        if name == IMPACT:
            return self.impact
        raise BranchError(f"unknown metric {name!r}")


@dataclass(frozen=True, eq=False)
class BranchSet:
    """Flat list of branches from all trees of one forest.

    ``bootstrap_index_sets`` are the forest's per-tree bootstrap draws, kept so
    branches can be scored on their own tree's growing sample.
    """

    branches: tuple
    n_trees: int
    n_features: int
    n_classes: int
    task: str = CLASSIFICATION
    evaluation_scope: str | None = None
    bootstrap_index_sets: tuple = field(default=(), repr=False)

    def __len__(self) -> int:
        return len(self.branches)

    def __iter__(self):
        return iter(self.branches)

    @property
    def evaluated(self) -> bool:
        return self.evaluation_scope is not None and all(b.evaluated for b in self.branches)

    @property
    def n_predicates(self) -> int:
        return sum(b.n_predicates for b in self.branches)

    @cached_property
    def leaf_labels(self) -> np.ndarray:
        dtype = np.int64 if self.task == CLASSIFICATION else np.float64
        return np.array([b.leaf_label for b in self.branches], dtype=dtype)

    @cached_property
    def intervals(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-branch ``(lower, upper)`` bounds; covered iff lower < x <= upper."""
        lo = np.full((len(self.branches), self.n_features), -np.inf)
        hi = np.full((len(self.branches), self.n_features), np.inf)
        for i, b in enumerate(self.branches):
            for f, t, side in b.predicates:
                if side == LE:
                    hi[i, f] = min(hi[i, f], t)
                else:
                    lo[i, f] = max(lo[i, f], t)
        return lo, hi

    def covering(self, x: np.ndarray) -> np.ndarray:
        """Boolean vector: which branches cover the single sample ``x``."""
        lo, hi = self.intervals
        return np.all((x > lo) & (x <= hi), axis=1)

    def coverage_matrix(self, X: np.ndarray) -> np.ndarray:
        """Boolean (n_branches, n_rows) coverage of every row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        out = np.empty((len(self.branches), X.shape[0]), dtype=bool)
        for i, b in enumerate(self.branches):
            out[i] = b.mask(X)
        return out

    def with_branches(self, branches: Iterable[Branch]) -> "BranchSet":
        return replace(self, branches=tuple(branches))


def compact_predicates(predicates: Sequence[SplitPredicate]) -> tuple:
    """Reduce a path to at most one GT (lower) and one LE (upper) bound per feature.

    The tightest bound of each kind is kept, at the position where that
    (feature, side) first appears on the path.
    """
    tightest: dict[tuple[int, str], float] = {}
    for f, t, side in predicates:
        key = (f, side)
        if key not in tightest:
            tightest[key] = t
        elif side == LE:
            tightest[key] = min(tightest[key], t)
        else:
            tightest[key] = max(tightest[key], t)
    out = tuple(SplitPredicate(f, t, side) for (f, side), t in tightest.items())
    for f, t, side in out:
        if side == GT and (f, LE) in tightest and not t < tightest[(f, LE)]:
            raise BranchError(f"empty interval on feature {f}: ({t}, {tightest[(f, LE)]}]")
    return out


def tree_paths(tree) -> list[tuple[Leaf, tuple]]:
    """(leaf, root-to-leaf predicates) for every leaf, leaves in preorder."""
    out = []
    stack = [(tree, ())]
    while stack:
        node, path = stack.pop()
        if isinstance(node, Leaf):
            out.append((node, path))
            continue
        assert isinstance(node, Internal)
        stack.append((node.right, path + (SplitPredicate(node.feature, node.threshold, GT),)))
        stack.append((node.left, path + (SplitPredicate(node.feature, node.threshold, LE),)))
    return out


def decompose_to_branches(forest: Forest, compact: bool = True) -> BranchSet:
    """One unevaluated branch per (tree, leaf).

    With ``compact`` the path predicates are reduced to per-feature intervals;
    coverage is unchanged.
    """
    branches = []
    for j, tree in enumerate(forest.trees):
        for i, (leaf, path) in enumerate(tree_paths(tree)):
            preds = compact_predicates(path) if compact else path
            branches.append(Branch(j, i, preds, leaf.label))
    return BranchSet(
        tuple(branches),
        n_trees=len(forest.trees),
        n_features=forest.n_features,
        n_classes=forest.n_classes,
        task=forest.task,
        bootstrap_index_sets=forest.bootstrap_index_sets,
    )


def covers(branch: Branch, x) -> bool:
    return all(p.holds(x) for p in branch.predicates)


def branch_coverage_set(branch: Branch, d: Dataset) -> np.ndarray:
    """Indices of the rows of ``d`` covered by ``branch``."""
    return np.flatnonzero(branch.mask(d.features))


def _require_classification(d: Dataset):
    if not d.is_classification:
        raise BranchError("branch accuracy is defined for classification only")


def branch_accuracy(branch: Branch, d: Dataset) -> float:
    """Fraction of covered rows whose label equals the leaf label (0 if none)."""
    _require_classification(d)
    rows = branch_coverage_set(branch, d)
    if rows.size == 0:
        return 0.0
    return float(np.count_nonzero(d.labels[rows] == branch.leaf_label) / rows.size)


def impact_factor(branch: Branch, d: Dataset) -> float:
    """Share of all rows of ``d`` that the branch covers and labels correctly."""
    _require_classification(d)
    rows = branch_coverage_set(branch, d)
    if rows.size == 0:
        return 0.0
    correct = np.count_nonzero(d.labels[rows] == branch.leaf_label)
    return (correct / rows.size) * (rows.size / d.n_samples)


def _scored(branch: Branch, X: np.ndarray, y: np.ndarray, classify: bool) -> Branch:
    m = branch.mask(X)
    k = int(np.count_nonzero(m))
    if not classify:
        return replace(branch, k=k)
    if k == 0:
        return replace(branch, k=0, acc=0.0, impact=0.0)
    acc = float(np.count_nonzero(y[m] == branch.leaf_label) / k)
    return replace(branch, k=k, acc=acc, impact=acc * (k / X.shape[0]))


def evaluate_branch_stats(bs: BranchSet, d: Dataset, scope: str = FULL_TRAINING_SET) -> BranchSet:
    """Populate ``k``, ``acc`` and ``impact`` of every branch.

    Args:
        bs: branches to score.
        d: the training data the forest was fitted on.
        scope: ``"full"`` scores every branch on all rows of ``d``;
            ``"bootstrap"`` scores each branch on its own tree's bootstrap
            draw (duplicates counted), so ``N`` is the bootstrap size.

    Regression branch sets only get ``k``; accuracy and impact stay unset.
    """
    if scope not in SCOPES:
        raise BranchError(f"unknown scope {scope!r}; expected one of {SCOPES}")
    if d.n_features != bs.n_features:
        raise BranchError(f"dataset has {d.n_features} features, branches expect {bs.n_features}")
    classify = bs.task == CLASSIFICATION
    if classify:
        _require_classification(d)
    X, y = d.features, d.labels
    if scope == FULL_TRAINING_SET:
        scored = [_scored(b, X, y, classify) for b in bs.branches]
    else:
        if len(bs.bootstrap_index_sets) < bs.n_trees:
            raise BranchError("bootstrap scope needs the per-tree bootstrap index sets")
        views: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        scored = []
        for b in bs.branches:
            if b.tree_index not in views:
                rows = np.asarray(bs.bootstrap_index_sets[b.tree_index])
                if rows.size and rows.max() >= d.n_samples:
                    raise BranchError("bootstrap indices exceed the dataset; pass the training data")
                views[b.tree_index] = (X[rows], y[rows])
            scored.append(_scored(b, *views[b.tree_index], classify))
    return replace(bs, branches=tuple(scored), evaluation_scope=scope)


@dataclass(frozen=True)
class PruneCriterion:
    kind: str = ACCURACY
    threshold: float = 0.9

    def __post_init__(self):
        if self.kind not in METRICS:
            raise BranchError(f"unknown criterion {self.kind!r}; expected one of {METRICS}")
        if not 0.0 <= self.threshold <= 1.0:
            raise BranchError(f"threshold must lie in [0, 1], got {self.threshold}")


def crossbreed_prune(bs: BranchSet, criterion: PruneCriterion) -> BranchSet:
    """Keep the branches whose criterion value is >= the threshold, in order."""
    if not bs.evaluated:
        raise BranchError("branch statistics are not populated; evaluate before pruning")
    keep = [b for b in bs.branches if b.metric(criterion.kind) >= criterion.threshold]
    return bs.with_branches(keep)


class Histogram(NamedTuple):
    bin_edges: np.ndarray
    counts: np.ndarray


def branch_histogram(bs: BranchSet, metric: str = ACCURACY, bins: int = 10) -> Histogram:
    """Uniform bins over [0, 1]; the last bin includes 1.0."""
    if bins < 1:
        raise BranchError(f"bins must be a positive integer, got {bins}")
    if metric not in METRICS:
        raise BranchError(f"unknown metric {metric!r}")
    if not bs.evaluated:
        raise BranchError("branch statistics are not populated")
    values = np.array([b.metric(metric) for b in bs.branches], dtype=np.float64)
    edges = np.arange(bins + 1) / bins
    counts, _ = np.histogram(values, bins=edges)
    return Histogram(edges, counts)


def _open_for_writing(path_or_file):
    if hasattr(path_or_file, "write"):
        return path_or_file, False
    return open(path_or_file, "w", newline="", encoding="utf-8"), True


def write_histogram(hist: Histogram, path_or_file) -> None:
    fh, owned = _open_for_writing(path_or_file)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, c in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    finally:
        if owned:
            fh.close()


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_branch_dump(bs: BranchSet, path_or_file) -> None:
    fh, owned = _open_for_writing(path_or_file)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tree_index", "branch_index", "n_predicates", "leaf_label", "k", "acc", "impact"])
        for b in bs.branches:
            w.writerow([
                b.tree_index, b.leaf_index, b.n_predicates, _fmt(b.leaf_label),
                _fmt(b.k), _fmt(b.acc), _fmt(b.impact),
            ])
    finally:
        if owned:
            fh.close()
