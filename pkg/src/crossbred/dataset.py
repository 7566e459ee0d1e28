"""Datasets: synthetic generation, CSV ingestion, class merging and sampling.

A :class:`Dataset` is an immutable pair of a float feature matrix and a label
vector. Classification labels are always re-indexed to ``0..C-1``; the
original label values survive in ``class_values``.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

CLASSIFICATION = "classification"
REGRESSION = "regression"


class DatasetError(ValueError):
    """Raised for invalid dataset contents or sampling parameters."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """N x p numeric features with class indices (or real targets).

    Attributes:
        features: float64 array of shape (N, p), all finite.
        labels: int64 class indices in [0, n_classes) for classification,
            float64 targets for regression.
        n_classes: number of classes C (0 for regression).
        task: ``"classification"`` or ``"regression"``.
        class_values: original label value of each class index.
        source_rows: for derived datasets (splits, bootstrap samples), the row
            index in the parent dataset of every row here.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int = 0
    task: str = CLASSIFICATION
    class_values: tuple = ()
    source_rows: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DatasetError("features contain missing or non-finite values")
        if self.task == CLASSIFICATION:
            y = np.asarray(self.labels)
            if y.size and not np.all(np.equal(np.mod(y, 1), 0)):
                raise DatasetError("classification labels must be integers")
            y = y.astype(np.int64)
            if self.n_classes < 1:
                raise DatasetError("classification dataset needs n_classes >= 1")
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise DatasetError(f"labels must lie in [0, {self.n_classes})")
            values = tuple(self.class_values) or tuple(range(self.n_classes))
            if len(values) != self.n_classes:
                raise DatasetError("class_values must name every class")
        elif self.task == REGRESSION:
            y = np.asarray(self.labels, dtype=np.float64)
            if not np.all(np.isfinite(y)):
                raise DatasetError("regression targets must be finite")
            values = ()
        else:
            raise DatasetError(f"unknown task {self.task!r}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise DatasetError(
                f"labels length {y.shape[0] if y.ndim else 0} != row count {x.shape[0]}"
            )
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "class_values", values)
        if self.source_rows is not None:
            object.__setattr__(self, "source_rows", _frozen(np.asarray(self.source_rows, dtype=np.int64)))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.task == CLASSIFICATION

    def subset(self, rows: Sequence[int] | np.ndarray) -> "Dataset":
        """Rows ``rows`` of this dataset, recording them in ``source_rows``."""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            self.features[rows],
            self.labels[rows],
            n_classes=self.n_classes,
            task=self.task,
            class_values=self.class_values,
            source_rows=rows,
        )

    def fingerprint(self) -> str:
        """SHA-256 over shape, task, features and labels."""
        h = hashlib.sha256()
        h.update(f"{self.task}:{self.n_samples}x{self.n_features}:{self.n_classes}".encode())
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic hypercube-cluster generator."""

    n_samples: int = 1000
    n_features: int = 20
    n_informative: int = 10
    n_classes: int = 2
    n_clusters_per_class: int = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("n_samples", "n_features", "n_informative", "n_classes", "n_clusters_per_class"):
            if getattr(self, name) < 1:
                raise DatasetError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_classes < 2:
            raise DatasetError("n_classes must be at least 2")
        if self.n_informative > self.n_features:
            raise DatasetError(
                f"n_informative ({self.n_informative}) exceeds n_features ({self.n_features})"
            )
        if self.n_classes * self.n_clusters_per_class > 2 ** self.n_informative:
            raise DatasetError(
                f"{self.n_classes} classes x {self.n_clusters_per_class} clusters need more "
                f"than the 2**{self.n_informative} available hypercube vertices"
            )
        if not 0 <= self.seed < 2**64:
            raise DatasetError("seed must be a 64-bit unsigned integer")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "SyntheticSpec":
        """Parse ``n_samples,n_features,n_informative,n_classes[,n_clusters]``."""
        try:
            parts = [int(v) for v in text.split(",")]
        except ValueError:
            raise DatasetError(f"cannot parse synthetic spec {text!r}") from None
        if len(parts) not in (4, 5):
            raise DatasetError(
                "synthetic spec is n_samples,n_features,n_informative,n_classes[,n_clusters]"
            )
        return cls(*parts, seed=seed)


class SplitPair(NamedTuple):
    train: Dataset
    test: Dataset


class FeatureStat(NamedTuple):
    index: int
    mean: float
    std: float


def _even_sizes(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _distinct_vertices(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    # SyntheticSpec validation guarantees count <= 2**dim.
    if dim <= 20:
        codes = rng.choice(2**dim, size=count, replace=False)
        bits = (codes[:, None] >> np.arange(dim)) & 1
        return bits.astype(np.float64)
    # High dimension: rejection sampling, collisions are negligible.
    seen: set[bytes] = set()
    out = []
    while len(out) < count:
        v = rng.integers(0, 2, size=dim).astype(np.uint8)
        key = v.tobytes()
        if key not in seen:
            seen.add(key)
            out.append(v)
    return np.array(out, dtype=np.float64)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Gaussian clusters at hypercube vertices, one group of clusters per class.

    The first ``n_informative`` columns carry the class structure: every class
    owns ``n_clusters_per_class`` unit-variance clusters centred on distinct
    vertices of the hypercube ``{-1, +1}^n_informative`` (side 2). The other
    columns are independent standard normal noise. Rows are shuffled.
    """
    rng = np.random.default_rng(spec.seed)
    n_inf = spec.n_informative
    n_clusters = spec.n_classes * spec.n_clusters_per_class
    centroids = 2.0 * _distinct_vertices(rng, n_clusters, n_inf) - 1.0

    x = np.empty((spec.n_samples, spec.n_features), dtype=np.float64)
    y = np.empty(spec.n_samples, dtype=np.int64)
    start = 0
    for k, class_size in enumerate(_even_sizes(spec.n_samples, spec.n_classes)):
        for c, size in enumerate(_even_sizes(class_size, spec.n_clusters_per_class)):
            center = centroids[k * spec.n_clusters_per_class + c]
            stop = start + size
            x[start:stop, :n_inf] = center + rng.standard_normal((size, n_inf))
            y[start:stop] = k
            start = stop
    x[:, n_inf:] = rng.standard_normal((spec.n_samples, spec.n_features - n_inf))

    order = rng.permutation(spec.n_samples)
    return Dataset(x[order], y[order], n_classes=spec.n_classes)


def _reindex(raw: Sequence, task: str):
    if task == REGRESSION:
        return np.asarray(raw, dtype=np.float64), 0, ()
    values = sorted(set(raw))
    lookup = {v: i for i, v in enumerate(values)}
    return np.array([lookup[v] for v in raw], dtype=np.int64), len(values), tuple(values)


def load_csv(
    path: str | Path,
    label_column: int = -1,
    has_header: bool = False,
    ignore_columns: Sequence[int] = (),
    task: str = CLASSIFICATION,
) -> Dataset:
    """Read a comma-separated numeric table.

    Args:
        path: UTF-8 CSV file.
        label_column: column index of the label; negative values count from
            the end.
        has_header: skip the first line.
        ignore_columns: column indices dropped before parsing (identifier
            columns and the like). Negative indices count from the end.
        task: ``"classification"`` parses labels as integers and re-indexes
            them to ``0..C-1`` in sorted order of the original values.

    Raises:
        DatasetError: on an empty file, ragged rows, or an unparsable cell;
            the message names the 1-based line and 0-based column.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    line0 = 1
    if has_header and rows:
        rows = rows[1:]
        line0 = 2
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DatasetError(f"{path}: no data rows")

    width = len(rows[0])
    label_idx = label_column % width if -width <= label_column < width else None
    if label_idx is None:
        raise DatasetError(f"{path}: label column {label_column} out of range for {width} columns")
    dropped = {c % width for c in ignore_columns if -width <= c < width}
    if label_idx in dropped:
        raise DatasetError(f"{path}: label column {label_idx} is also ignored")
    feature_cols = [c for c in range(width) if c != label_idx and c not in dropped]

    x = np.empty((len(rows), len(feature_cols)), dtype=np.float64)
    raw_labels = []
    for i, row in enumerate(rows):
        line = line0 + i
        if len(row) != width:
            raise DatasetError(f"{path}: line {line} has {len(row)} fields, expected {width}")
        for j, c in enumerate(feature_cols):
            try:
                v = float(row[c])
            except ValueError:
                raise DatasetError(f"{path}: line {line}, column {c}: cannot parse {row[c]!r}") from None
            if not math.isfinite(v):
                raise DatasetError(f"{path}: line {line}, column {c}: non-finite value {row[c]!r}")
            x[i, j] = v
        cell = row[label_idx].strip()
        try:
            if task == REGRESSION:
                lab = float(cell)
                if not math.isfinite(lab):
                    raise ValueError
            else:
                f = float(cell)
                if not f.is_integer():
                    raise ValueError
                lab = int(f)
        except ValueError:
            raise DatasetError(
                f"{path}: line {line}, column {label_idx}: invalid label {row[label_idx]!r}"
            ) from None
        raw_labels.append(lab)

    y, n_classes, values = _reindex(raw_labels, task)
    return Dataset(x, y, n_classes=n_classes, task=task, class_values=values)


def merge_classes(d: Dataset, positive: Sequence[int]) -> Dataset:
    """Collapse to a binary task: label 1 iff the original class is in ``positive``.

    ``positive`` holds class indices of ``d`` (not original label values).
    """
    if not d.is_classification:
        raise DatasetError("merge_classes needs a classification dataset")
    pos = set(int(c) for c in positive)
    if not pos:
        raise DatasetError("positive class set is empty")
    if any(c < 0 or c >= d.n_classes for c in pos):
        raise DatasetError(f"positive classes {sorted(pos)} outside [0, {d.n_classes})")
    if len(pos) == d.n_classes:
        raise DatasetError("positive class set covers every class")
    y = np.isin(d.labels, sorted(pos)).astype(np.int64)
    return Dataset(d.features, y, n_classes=2, source_rows=d.source_rows)


def _stratified_alloc(labels: np.ndarray, n_classes: int, n_train: int) -> np.ndarray | None:
    counts = np.bincount(labels, minlength=n_classes)
    present = np.flatnonzero(counts)
    if np.any(counts[present] < 2):
        return None
    quota = counts * (n_train / labels.shape[0])
    # Every class keeps at least one row on each side.
    alloc = np.clip(np.floor(quota).astype(np.int64), 1, np.maximum(counts - 1, 1))
    alloc[counts == 0] = 0
    # Largest remainder first, ties to the lowest class index.
    order = sorted(present, key=lambda c: (-(quota[c] - alloc[c]), c))
    while alloc.sum() < n_train:
        room = [c for c in order if alloc[c] < counts[c] - 1]
        if not room:
            break
        alloc[room[0]] += 1
        order = sorted(present, key=lambda c: (-(quota[c] - alloc[c]), c))
    while alloc.sum() > n_train:
        room = [c for c in reversed(order) if alloc[c] > 1]
        if not room:
            break
        alloc[room[0]] -= 1
        order = sorted(present, key=lambda c: (-(quota[c] - alloc[c]), c))
    return alloc


def train_test_split(d: Dataset, train_fraction: float = 0.75, seed=0) -> SplitPair:
    """Seeded 75/25-style split, stratified when every class has two or more rows.

    The training part gets ``round(train_fraction * N)`` rows, clamped so both
    parts are nonempty. When there are not enough rows to give every class a
    row on both sides, the stratified total may differ from that target.
    Row order inside each part follows the source order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DatasetError(f"train_fraction must lie strictly between 0 and 1, got {train_fraction}")
    n = d.n_samples
    if n < 2:
        raise DatasetError("need at least 2 rows to split")
    n_train = min(max(int(math.floor(train_fraction * n + 0.5)), 1), n - 1)
    rng = np.random.default_rng(seed)

    alloc = _stratified_alloc(d.labels, d.n_classes, n_train) if d.is_classification else None
    if alloc is None:
        perm = rng.permutation(n)
        train_rows = np.sort(perm[:n_train])
    else:
        picked = []
        for c in range(d.n_classes):
            members = np.flatnonzero(d.labels == c)
            if members.size:
                picked.append(rng.permutation(members)[: alloc[c]])
        train_rows = np.sort(np.concatenate(picked))
    mask = np.zeros(n, dtype=bool)
    mask[train_rows] = True
    return SplitPair(d.subset(train_rows), d.subset(np.flatnonzero(~mask)))


def bootstrap_sample(d: Dataset, seed=0) -> Dataset:
    """N rows drawn with replacement; ``source_rows`` holds the drawn indices."""
    if d.n_samples < 1:
        raise DatasetError("cannot bootstrap an empty dataset")
    rng = np.random.default_rng(seed)
    return d.subset(rng.integers(0, d.n_samples, size=d.n_samples))


def feature_summary(d: Dataset) -> list[FeatureStat]:
    """Per-feature mean and sample standard deviation (divisor N-1)."""
    if d.n_samples < 2:
        raise DatasetError("feature_summary needs at least 2 rows")
    means = d.features.mean(axis=0)
    stds = d.features.std(axis=0, ddof=1)
    return [FeatureStat(j, float(m), float(s)) for j, (m, s) in enumerate(zip(means, stds))]


def write_feature_summary(stats: Sequence[FeatureStat], path_or_file) -> None:
    """Write ``feature_index,mean,std`` CSV."""
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature_index", "mean", "std"])
        for s in stats:
            w.writerow([s.index, repr(s.mean), repr(s.std)])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="", encoding="utf-8") as fh:
            _write(fh)
