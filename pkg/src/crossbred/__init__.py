"""Branch-level random forests: grow, decompose into branches, prune, vote."""

__version__ = "0.1.0"

from .branches import (
    Branch,
    BranchSet,
    PruneCriterion,
    SplitPredicate,
    branch_accuracy,
    branch_coverage_set,
    branch_histogram,
    covers,
    crossbreed_prune,
    decompose_to_branches,
    evaluate_branch_stats,
    impact_factor,
)
from .dataset import (
    Dataset,
    SyntheticSpec,
    bootstrap_sample,
    feature_summary,
    generate_synthetic,
    load_csv,
    merge_classes,
    train_test_split,
)
from .forest import ForestConfig, best_split, fit_forest, fit_tree, predict_forest, predict_tree
from .modelfile import ModelFile, load_model, save_model
from .predict import CrfModel, FallbackPolicy, build_fallback, classify, classify_batch, regress
from .pipeline import SweepSpec, evaluate_model, prune_model, run_sweep, train_model

__all__ = [
    "Branch",
    "BranchSet",
    "CrfModel",
    "Dataset",
    "FallbackPolicy",
    "ForestConfig",
    "ModelFile",
    "PruneCriterion",
    "SplitPredicate",
    "SweepSpec",
    "SyntheticSpec",
    "best_split",
    "bootstrap_sample",
    "branch_accuracy",
    "branch_coverage_set",
    "branch_histogram",
    "build_fallback",
    "classify",
    "classify_batch",
    "covers",
    "crossbreed_prune",
    "decompose_to_branches",
    "evaluate_branch_stats",
    "evaluate_model",
    "feature_summary",
    "fit_forest",
    "fit_tree",
    "generate_synthetic",
    "impact_factor",
    "load_csv",
    "load_model",
    "merge_classes",
    "predict_forest",
    "predict_tree",
    "prune_model",
    "regress",
    "run_sweep",
    "save_model",
    "train_model",
    "train_test_split",
]
