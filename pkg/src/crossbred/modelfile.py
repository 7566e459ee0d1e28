"""Versioned JSON model files.

A model file stores the forest (config, trees, bootstrap draws), the branch
set with its statistics, the fallback policy and provenance. Trees are
written as flat preorder node lists so depth never hits recursion limits.
Floats are written with ``repr`` precision and round-trip exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .branches import Branch, BranchSet, SplitPredicate
from .forest import CLASSIFICATION, Forest, ForestConfig, Internal, Leaf, iter_nodes
from .predict import CrfModel, FallbackPolicy

FORMAT_NAME = "crossbred-model"
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    """Malformed model file."""


class ModelVersionError(ModelFileError):
    pass


class ModelTruncatedError(ModelFileError):
    pass


@dataclass(eq=False)
class ModelFile:
    forest: Forest
    branches: BranchSet
    fallback: FallbackPolicy | None
    target_mean: float | None = None
    provenance: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def model(self) -> CrfModel:
        return CrfModel(self.branches, self.fallback, self.target_mean)


def _py(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def _encode_tree(tree) -> list:
    nodes = list(iter_nodes(tree))
    index = {id(n): i for i, n in enumerate(nodes)}
    out = []
    for n in nodes:
        if isinstance(n, Internal):
            out.append(["split", int(n.feature), float(n.threshold), index[id(n.left)], index[id(n.right)], n.depth])
        else:
            out.append(["leaf", _py(n.label), [int(c) for c in n.class_counts], int(n.n_samples), n.depth])
    return out


def _decode_tree(rows: list, task: str):
    built: list = [None] * len(rows)
    for i in range(len(rows) - 1, -1, -1):
        r = rows[i]
        if r[0] == "split":
            _, f, t, li, ri, depth = r
            if not (i < li < len(rows) and i < ri < len(rows)):
                raise ModelFileError("tree node references a child out of order")
            built[i] = Internal(int(f), float(t), built[li], built[ri], int(depth))
        elif r[0] == "leaf":
            _, label, counts, n, depth = r
            label = int(label) if task == CLASSIFICATION else float(label)
            built[i] = Leaf(label, tuple(int(c) for c in counts), int(n), int(depth))
        else:
            raise ModelFileError(f"unknown tree node kind {r[0]!r}")
    if not built or any(b is None for b in built):
        raise ModelFileError("tree has dangling nodes")
    return built[0]


def _encode_fallback(fb: FallbackPolicy | None):
    if fb is None:
        return None
    return {
        "kind": fb.kind,
        "n_classes": fb.n_classes,
        "seed": fb.seed,
        "majority_label": fb.majority_label,
        "centroids": None if fb.centroids is None else [[float(v) for v in row] for row in fb.centroids],
    }


def _decode_fallback(doc):
    if doc is None:
        return None
    cents = doc.get("centroids")
    return FallbackPolicy(
        doc["kind"],
        int(doc["n_classes"]),
        seed=int(doc["seed"]),
        majority_label=doc.get("majority_label"),
        centroids=None if cents is None else np.array(cents, dtype=np.float64),
    )


def to_document(m: ModelFile) -> dict:
    f, bs = m.forest, m.branches
    return {
        "format": FORMAT_NAME,
        "format_version": m.format_version,
        "task": f.task,
        "n_features": f.n_features,
        "n_classes": f.n_classes,
        "config": asdict(f.config),
        "trees": [_encode_tree(t) for t in f.trees],
        "bootstrap_index_sets": [[int(i) for i in b] for b in f.bootstrap_index_sets],
        "branches": {
            "evaluation_scope": bs.evaluation_scope,
            "items": [
                [b.tree_index, b.leaf_index, [[p.feature, p.threshold, p.side] for p in b.predicates],
                 _py(b.leaf_label), b.k, b.acc, b.impact]
                for b in bs.branches
            ],
        },
        "fallback": _encode_fallback(m.fallback),
        "target_mean": m.target_mean,
        "provenance": m.provenance,
    }


def from_document(doc: dict) -> ModelFile:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ModelFileError("not a crossbred model file")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"unsupported format_version {version!r}; this build reads version {FORMAT_VERSION}")
    try:
        task = doc["task"]
        config = ForestConfig(**doc["config"])
        trees = tuple(_decode_tree(t, task) for t in doc["trees"])
        if len(trees) != config.n_trees:
            raise ModelFileError(f"config says {config.n_trees} trees, file holds {len(trees)}")
        boots = tuple(np.array(b, dtype=np.int64) for b in doc["bootstrap_index_sets"])
        forest = Forest(trees, config, int(doc["n_features"]), int(doc["n_classes"]), boots)
        items = []
        for tree_index, leaf_index, preds, label, k, acc, impact in doc["branches"]["items"]:
            items.append(Branch(
                int(tree_index),
                int(leaf_index),
                tuple(SplitPredicate(int(f), float(t), str(s)) for f, t, s in preds),
                int(label) if task == CLASSIFICATION else float(label),
                None if k is None else int(k),
                None if acc is None else float(acc),
                None if impact is None else float(impact),
            ))
        bs = BranchSet(
            tuple(items),
            n_trees=len(trees),
            n_features=forest.n_features,
            n_classes=forest.n_classes,
            task=task,
            evaluation_scope=doc["branches"]["evaluation_scope"],
            bootstrap_index_sets=boots,
        )
        model = ModelFile(
            forest,
            bs,
            _decode_fallback(doc["fallback"]),
            target_mean=doc.get("target_mean"),
            provenance=dict(doc.get("provenance") or {}),
            format_version=version,
        )
        model.model  # validates dimensions and fallback consistency
    except ModelFileError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise ModelFileError(f"malformed model file: {e}") from e
    return model


def dumps(m: ModelFile) -> str:
    return json.dumps(to_document(m), separators=(",", ":")) + "\n"


def save_model(m: ModelFile, path: str | Path) -> None:
    Path(path).write_text(dumps(m), encoding="utf-8")


def loads(text: str) -> ModelFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        if e.pos >= len(text.rstrip()):
            raise ModelTruncatedError(f"model file is truncated (ends at character {len(text)})") from e
        raise ModelFileError(f"model file is not valid JSON: {e}") from e
    return from_document(doc)


def load_model(path: str | Path) -> ModelFile:
    return loads(Path(path).read_text(encoding="utf-8"))
