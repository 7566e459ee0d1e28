"""Binary recursive partitioning trees and the bagged random-subspace forest.

Trees route a sample left iff ``x[feature] <= threshold``. Thresholds sit at
midpoints between consecutive distinct values of the rows reaching a node,
so every split leaves both children nonempty.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .dataset import CLASSIFICATION, REGRESSION, Dataset, bootstrap_sample

# Gains closer than this (relative to the node impurity) count as ties.
GAIN_TIE_TOL = 1e-12


class ForestError(ValueError):
    pass


@dataclass(eq=False)
class Leaf:
    label: int | float
    class_counts: tuple = ()
    n_samples: int = 0
    depth: int = 0


@dataclass(eq=False)
class Internal:
    feature: int
    threshold: float
    left: "Leaf | Internal | None" = None
    right: "Leaf | Internal | None" = None
    depth: int = 0


TreeNode = Leaf | Internal


class Split(NamedTuple):
    feature: int
    threshold: float
    gain: float


@dataclass(frozen=True)
class ForestConfig:
    """Hyper-parameters of the bagged forest.

    ``mtry=None`` resolves to ``floor(sqrt(p))`` at fit time. A node with fewer
    than ``min_leaf_size`` rows is not split.
    """

    n_trees: int = 50
    mtry: int | None = None
    min_leaf_size: int = 1
    max_depth: int | None = None
    task: str = CLASSIFICATION
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ForestError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.mtry is not None and self.mtry < 1:
            raise ForestError(f"mtry must be >= 1, got {self.mtry}")
        if self.min_leaf_size < 1:
            raise ForestError(f"min_leaf_size must be >= 1, got {self.min_leaf_size}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ForestError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise ForestError(f"unknown task {self.task!r}")
        if not 0 <= self.seed < 2**64:
            raise ForestError("seed must be a 64-bit unsigned integer")

    def resolved_mtry(self, n_features: int) -> int:
        m = self.mtry if self.mtry is not None else max(1, int(math.isqrt(n_features)))
        if m > n_features:
            raise ForestError(f"mtry={m} exceeds the {n_features} available features")
        return m


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple
    config: ForestConfig
    n_features: int
    n_classes: int
    bootstrap_index_sets: tuple = field(repr=False, default=())

    @property
    def task(self) -> str:
        return self.config.task

    def head(self, n_trees: int) -> "Forest":
        """The forest made of the first ``n_trees`` trees.

        Per-tree seeds depend only on ``(seed, tree index)``, so this equals
        fitting with ``n_trees`` directly.
        """
        if not 1 <= n_trees <= len(self.trees):
            raise ForestError(f"cannot take {n_trees} of {len(self.trees)} trees")
        return Forest(
            self.trees[:n_trees],
            replace(self.config, n_trees=n_trees),
            self.n_features,
            self.n_classes,
            self.bootstrap_index_sets[:n_trees],
        )


def _split_tolerance(impurity: float) -> float:
    return GAIN_TIE_TOL * max(impurity, np.finfo(float).tiny)


def _feature_gains(x: np.ndarray, y: np.ndarray, n_classes: int):
    """Gain and threshold for every valid split position of one feature."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    valid = np.flatnonzero(xs[:-1] < xs[1:])
    if valid.size == 0:
        return None
    n = xs.shape[0]
    n_left = (valid + 1).astype(np.float64)
    n_right = n - n_left
    ys = y[order]
    if n_classes:
        counts = np.zeros((n, n_classes), dtype=np.int64)
        counts[np.arange(n), ys] = 1
        total = np.bincount(ys, minlength=n_classes)
        left = np.cumsum(counts, axis=0)[valid]
        right = total - left
        sq_left = (left * left).sum(axis=1)
        sq_right = (right * right).sum(axis=1)
        gain = (sq_left / n_left + sq_right / n_right) / n - float(total @ total) / (n * n)
    else:
        yc = ys - ys.mean()
        s_left = np.cumsum(yc)[valid]
        s_right = yc.sum() - s_left
        gain = (s_left**2 / n_left + s_right**2 / n_right - yc.sum() ** 2 / n) / n
    lo, hi = xs[valid], xs[valid + 1]
    thr = (lo + hi) / 2.0
    # Adjacent floats: the midpoint can round up onto the right value.
    thr = np.where(thr < hi, thr, lo)
    return gain, thr


def node_impurity(y: np.ndarray, n_classes: int) -> float:
    """Gini impurity (classification) or population variance (regression)."""
    if n_classes:
        p = np.bincount(y, minlength=n_classes) / y.shape[0]
        return float(1.0 - p @ p)
    return float(np.var(y))


def best_split(
    X: np.ndarray,
    y: np.ndarray,
    candidate_features: Sequence[int],
    n_classes: int = 0,
) -> Split | None:
    """Best impurity-decreasing binary split over ``candidate_features``.

    Gini decrease for classification (``n_classes > 0``), variance reduction
    for regression (``n_classes == 0``). Among gains tied within
    ``GAIN_TIE_TOL`` the lowest feature index wins, then the lowest threshold.
    Returns None when no candidate has two distinct values or every gain is
    zero.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0 or len(candidate_features) == 0:
        return None
    tol = _split_tolerance(node_impurity(y, n_classes))
    per_feature = []
    for f in sorted(set(int(f) for f in candidate_features)):
        res = _feature_gains(X[:, f], y, n_classes)
        if res is not None:
            per_feature.append((f, res[0], res[1]))
    if not per_feature:
        return None
    top = max(float(g.max()) for _, g, _ in per_feature)
    if top <= tol:
        return None
    for f, gain, thr in per_feature:
        hits = np.flatnonzero(gain >= top - tol)
        if hits.size:
            i = hits[np.argmin(thr[hits])]
            return Split(f, float(thr[i]), float(gain[i]))
    raise AssertionError("unreachable")


def _leaf(y: np.ndarray, n_classes: int, depth: int) -> Leaf:
    if n_classes:
        counts = np.bincount(y, minlength=n_classes)
        return Leaf(int(np.argmax(counts)), tuple(int(c) for c in counts), int(y.shape[0]), depth)
    return Leaf(float(np.mean(y)), (), int(y.shape[0]), depth)


def _is_pure(y: np.ndarray) -> bool:
    return bool(np.all(y == y[0]))


def fit_tree(data: Dataset, config: ForestConfig, tree_seed=0) -> TreeNode:
    """Grow one tree by binary recursive partitioning.

    Each node draws a random permutation of the features from the tree's own
    stream and searches the first ``mtry`` of them. If none of those admits a
    split while the node is still impure, the search widens to the next
    ``mtry`` features of the permutation, and so on. Nodes are expanded
    depth-first, left child first, which fixes the order of random draws.
    """
    if data.n_samples == 0:
        raise ForestError("cannot grow a tree on empty data")
    n_classes = data.n_classes if data.is_classification else 0
    X, y = data.features, data.labels
    p = data.n_features
    m = config.resolved_mtry(p)
    rng = np.random.default_rng(tree_seed)

    def grow(rows: np.ndarray, depth: int):
        yr = y[rows]
        if (
            _is_pure(yr)
            or rows.shape[0] < config.min_leaf_size
            or (config.max_depth is not None and depth >= config.max_depth)
        ):
            return None
        perm = rng.permutation(p)
        split = None
        for start in range(0, p, m):
            split = best_split(X[rows], yr, perm[: start + m], n_classes)
            if split is not None:
                break
        return split

    root_rows = np.arange(data.n_samples)
    split = grow(root_rows, 0)
    if split is None:
        return _leaf(y, n_classes, 0)
    root = Internal(split.feature, split.threshold, depth=0)
    # Explicit stack: (parent, side, rows, depth); right pushed first so the
    # left subtree is expanded first.
    stack = []

    def push_children(node: Internal, rows: np.ndarray):
        go_left = X[rows, node.feature] <= node.threshold
        stack.append((node, "right", rows[~go_left], node.depth + 1))
        stack.append((node, "left", rows[go_left], node.depth + 1))

    push_children(root, root_rows)
    while stack:
        parent, side, rows, depth = stack.pop()
        split = grow(rows, depth)
        if split is None:
            child = _leaf(y[rows], n_classes, depth)
        else:
            child = Internal(split.feature, split.threshold, depth=depth)
            push_children(child, rows)
        setattr(parent, side, child)
    return root


def _grow_member(data: Dataset, config: ForestConfig, tree_index: int):
    child = np.random.SeedSequence(config.seed, spawn_key=(tree_index,))
    boot_seed, tree_seed = child.spawn(2)
    sample = bootstrap_sample(data, boot_seed)
    return fit_tree(sample, config, tree_seed), sample.source_rows


_WORKER_STATE: tuple | None = None


def _init_worker(data, config):
    global _WORKER_STATE
    _WORKER_STATE = (data, config)


def _grow_in_worker(tree_index: int):
    data, config = _WORKER_STATE
    return _grow_member(data, config, tree_index)


def fit_forest(d: Dataset, config: ForestConfig, n_workers: int = 1) -> Forest:
    """Grow ``config.n_trees`` trees, each on its own bootstrap sample.

    Tree ``j`` uses seeds derived from ``(config.seed, j)`` only, so the result
    does not depend on ``n_workers``.
    """
    if d.n_samples == 0:
        raise ForestError("cannot fit a forest on empty data")
    if (config.task == CLASSIFICATION) != d.is_classification:
        raise ForestError(f"config task {config.task!r} does not match dataset task {d.task!r}")
    config = replace(config, mtry=config.resolved_mtry(d.n_features))
    indices = range(config.n_trees)
    if n_workers <= 1 or config.n_trees == 1:
        results = [_grow_member(d, config, j) for j in indices]
    else:
        workers = min(n_workers, config.n_trees)
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(d, config)) as ex:
            results = list(ex.map(_grow_in_worker, indices))
    trees = tuple(t for t, _ in results)
    boots = tuple(b for _, b in results)
    return Forest(trees, config, d.n_features, d.n_classes if d.is_classification else 0, boots)


def iter_nodes(tree: TreeNode) -> Iterator[TreeNode]:
    """Preorder traversal, left before right."""
    stack = [tree]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Internal):
            stack.append(node.right)
            stack.append(node.left)


def iter_leaves(tree: TreeNode) -> Iterator[Leaf]:
    return (n for n in iter_nodes(tree) if isinstance(n, Leaf))


def count_nodes(tree: TreeNode) -> int:
    return sum(1 for _ in iter_nodes(tree))


def tree_depth(tree: TreeNode) -> int:
    return max(n.depth for n in iter_nodes(tree))


def predict_tree(tree: TreeNode, x) -> int | float:
    node = tree
    while isinstance(node, Internal):
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.label


def apply_tree(tree: TreeNode, X: np.ndarray) -> np.ndarray:
    """Leaf label for every row of ``X`` (vectorised ``predict_tree``)."""
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape[0], dtype=np.float64)
    stack = [(tree, np.arange(X.shape[0]))]
    while stack:
        node, rows = stack.pop()
        if isinstance(node, Leaf):
            out[rows] = node.label
            continue
        go_left = X[rows, node.feature] <= node.threshold
        stack.append((node.left, rows[go_left]))
        stack.append((node.right, rows[~go_left]))
    return out


def _check_dim(forest: Forest, X: np.ndarray):
    if X.shape[-1] != forest.n_features:
        raise ForestError(f"expected {forest.n_features} features, got {X.shape[-1]}")


def forest_votes(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Per-class tree vote counts, shape (n_rows, n_classes)."""
    if forest.task != CLASSIFICATION:
        raise ForestError("tree voting needs a classification forest; average per-tree values instead")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check_dim(forest, X)
    votes = np.zeros((X.shape[0], forest.n_classes), dtype=np.int64)
    rows = np.arange(X.shape[0])
    for tree in forest.trees:
        votes[rows, apply_tree(tree, X).astype(np.int64)] += 1
    return votes


def predict_forest(forest: Forest, x) -> int:
    """Majority tree vote for one sample, ties to the lowest class index."""
    if forest.task != CLASSIFICATION:
        raise ForestError("predict_forest needs a classification forest; use the regression path")
    x = np.asarray(x, dtype=np.float64)
    _check_dim(forest, x)
    votes = np.zeros(forest.n_classes, dtype=np.int64)
    for tree in forest.trees:
        votes[predict_tree(tree, x)] += 1
    return int(np.argmax(votes))


def predict_forest_batch(forest: Forest, X: np.ndarray) -> np.ndarray:
    return np.argmax(forest_votes(forest, X), axis=1)
