import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import six_point_forest
from crossbred.branches import (
    Branch,
    BranchSet,
    PruneCriterion,
    SplitPredicate,
    crossbreed_prune,
    decompose_to_branches,
    evaluate_branch_stats,
)
from crossbred.dataset import REGRESSION, Dataset, SyntheticSpec, generate_synthetic
from crossbred.forest import ForestConfig, apply_tree, fit_forest, predict_forest
from crossbred.predict import (
    CrfModel,
    FallbackPolicy,
    PredictError,
    build_fallback,
    classify,
    classify_batch,
    predict_batch,
    regress,
)


def _three_branch_model(fallback_kind="majority", majority=1):
    # Two branches labelled A=0 and one labelled B=1 cover x0 <= 5.
    le = (SplitPredicate(0, 5.0, "le"),)
    branches = (Branch(0, 0, le, 0), Branch(1, 0, le, 0), Branch(2, 0, le, 1),
                Branch(2, 1, (SplitPredicate(0, 10.0, "gt"),), 1))
    bs = BranchSet(branches, 3, 1, 2)
    return CrfModel(bs, FallbackPolicy(fallback_kind, 2, majority_label=majority))


def test_classify_vote():
    out = classify(_three_branch_model(), [1.0])
    assert out.label == 0 and out.n_covering == 3
    assert out.votes.tolist() == [2, 1] and not out.used_fallback


def test_classify_fallback_when_uncovered():
    out = classify(_three_branch_model(majority=1), [7.0])
    assert (out.label, out.n_covering, out.used_fallback) == (1, 0, True)


def test_classify_single_branch_other_side():
    assert classify(_three_branch_model(), [11.0]).label == 1


def test_classify_tie_to_lowest_class():
    le = (SplitPredicate(0, 5.0, "le"),)
    bs = BranchSet((Branch(0, 0, le, 1), Branch(1, 0, le, 0)), 2, 1, 2)
    model = CrfModel(bs, FallbackPolicy("majority", 2, majority_label=1))
    assert classify(model, [0.0]).label == 0


def test_classify_dimension_mismatch():
    with pytest.raises(PredictError, match="features"):
        classify(_three_branch_model(), [1.0, 2.0])


def _regression_model():
    le = (SplitPredicate(0, 5.0, "le"),)
    branches = (Branch(0, 0, le, 2.0), Branch(1, 0, le, 4.0), Branch(1, 1, (SplitPredicate(0, 5.0, "gt"),), 9.0))
    return CrfModel(BranchSet(branches, 2, 1, 0, task=REGRESSION), target_mean=1.5)


def test_regress_mean_of_covering():
    out = regress(_regression_model(), [1.0])
    assert out.label == 3.0 and out.n_covering == 2


def test_regress_fallback_is_target_mean():
    bs = BranchSet((), 1, 1, 0, task=REGRESSION)
    out = regress(CrfModel(bs, target_mean=1.5), [0.0])
    assert out.label == 1.5 and out.used_fallback


def test_regress_rejects_classification_model():
    with pytest.raises(PredictError):
        regress(_three_branch_model(), [0.0])


def test_classify_batch_unpruned_never_falls_back(six_point_model, six_points):
    r = classify_batch(six_point_model.model, six_points)
    assert r.fallback_rate == 0.0
    assert r.accuracy == 1.0
    assert r.mean_covering == 1.0


def test_classify_batch_empty_set_always_falls_back(six_points):
    bs = BranchSet((), 1, 1, 2, evaluation_scope="full")
    model = CrfModel(bs, build_fallback(six_points, "majority"))
    r = classify_batch(model, six_points)
    assert r.fallback_rate == 1.0
    assert r.n_covering.tolist() == [0] * 6


def test_batch_csv(six_point_model, six_points):
    r = classify_batch(six_point_model.model, six_points)
    buf = io.StringIO()
    r.write_csv(six_points.labels, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "row_index,predicted,actual,J_prime,used_fallback"
    assert lines[1] == "0,0,0,1,0"
    assert len(lines) == 7


def test_build_fallback_majority():
    d = Dataset(np.zeros((5, 1)), np.array([2, 1, 2, 0, 2]), n_classes=3)
    fb = build_fallback(d, "majority")
    assert fb.decide(np.zeros(1)) == 2


def test_build_fallback_majority_tie_lowest():
    d = Dataset(np.zeros((4, 1)), np.array([1, 0, 1, 0]), n_classes=2)
    assert build_fallback(d, "majority").decide(np.zeros(1)) == 0


def test_build_fallback_centroid(six_points):
    fb = build_fallback(six_points, "centroid")
    assert fb.centroids.tolist() == [[2.0], [11.0]]
    assert fb.decide(np.array([2.0])) == 0
    assert fb.decide(np.array([9.0])) == 1


def test_centroid_absent_class_uses_global_mean():
    d = Dataset(np.array([[0.0], [2.0]]), np.array([0, 0]), n_classes=2)
    fb = build_fallback(d, "centroid")
    assert fb.centroids.tolist() == [[1.0], [1.0]]
    assert fb.decide(np.array([5.0])) == 0


def test_random_fallback_reproducible():
    d = Dataset(np.zeros((4, 1)), np.array([0, 1, 2, 3]), n_classes=4)
    a = build_fallback(d, "random", seed=11)
    b = build_fallback(d, "random", seed=11)
    draws_a = [a.decide(np.zeros(1)) for _ in range(50)]
    draws_b = [b.decide(np.zeros(1)) for _ in range(50)]
    assert draws_a == draws_b
    assert draws_a == [a.decide(np.zeros(1), ordinal=i) for i in range(50)]
    assert set(draws_a) <= {0, 1, 2, 3} and len(set(draws_a)) > 1


def test_random_batch_uses_row_ordinals():
    d = Dataset(np.zeros((4, 1)), np.array([0, 1, 2, 3]), n_classes=4)
    fb = build_fallback(d, "random", seed=3)
    model = CrfModel(BranchSet((), 1, 1, 4, evaluation_scope="full"), fb)
    X = np.zeros((20, 1))
    pred, _, _ = predict_batch(model, X, first_ordinal=5)
    assert pred.tolist() == [fb.decide(X[i], 5 + i) for i in range(20)]


def test_fallback_validation():
    with pytest.raises(PredictError):
        FallbackPolicy("nearest", 2)
    with pytest.raises(PredictError):
        FallbackPolicy("majority", 2)
    with pytest.raises(PredictError):
        FallbackPolicy("centroid", 2, centroids=np.zeros((3, 1)))


def test_model_requires_fallback_for_classification():
    with pytest.raises(PredictError):
        CrfModel(BranchSet((), 1, 1, 2))


def test_model_rejects_out_of_range_predicate():
    bs = BranchSet((Branch(0, 0, (SplitPredicate(3, 0.0, "le"),), 0),), 1, 2, 2)
    with pytest.raises(PredictError, match="feature"):
        CrfModel(bs, FallbackPolicy("majority", 2, majority_label=0))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), classes=st.integers(2, 4), trees=st.integers(1, 9))
def test_unpruned_matches_forest_vote(seed, classes, trees):
    d = generate_synthetic(SyntheticSpec(80, 4, 3, classes, 1, seed=seed))
    forest = fit_forest(d, ForestConfig(n_trees=trees, seed=seed))
    bs = evaluate_branch_stats(decompose_to_branches(forest), d)
    model = CrfModel(bs, build_fallback(d, "centroid"))
    X = np.random.default_rng(seed).normal(size=(40, 4)) * 2
    pred, n_cov, fallback = predict_batch(model, X)
    assert not fallback.any()
    assert n_cov.tolist() == [trees] * 40
    for i, x in enumerate(X):
        out = classify(model, x)
        assert out.label == predict_forest(forest, x) == pred[i]
        assert int(out.votes.sum()) == out.n_covering


def test_unpruned_regression_matches_tree_mean():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 3))
    d = Dataset(X, X[:, 0] * 2 + rng.normal(size=60), n_classes=0, task=REGRESSION)
    forest = fit_forest(d, ForestConfig(n_trees=5, task=REGRESSION, seed=1))
    bs = evaluate_branch_stats(decompose_to_branches(forest), d)
    model = CrfModel(bs, target_mean=float(d.labels.mean()))
    Q = rng.normal(size=(30, 3))
    expected = np.mean([apply_tree(t, Q) for t in forest.trees], axis=0)
    pred, _, _ = predict_batch(model, Q)
    assert np.allclose(pred, expected, rtol=0, atol=1e-12)
    for q, e in zip(Q, expected):
        assert regress(model, q).label == pytest.approx(e, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), tau=st.floats(0, 1))
def test_pruned_votes_and_fallback_flag(seed, tau):
    d = generate_synthetic(SyntheticSpec(60, 3, 3, 3, 1, seed=seed))
    forest = fit_forest(d, ForestConfig(n_trees=4, seed=seed))
    bs = crossbreed_prune(evaluate_branch_stats(decompose_to_branches(forest), d), PruneCriterion("accuracy", tau))
    model = CrfModel(bs, build_fallback(d, "majority"))
    for x in np.random.default_rng(seed).normal(size=(20, 3)):
        out = classify(model, x)
        assert int(out.votes.sum()) == out.n_covering <= 4
        assert out.used_fallback == (out.n_covering == 0)


def test_six_point_model_classifies(six_points, six_point_model):
    model = six_point_model.model
    assert six_point_forest(six_points).n_classes == model.n_classes
    assert classify(model, [2.0]).label == 0
    assert classify(model, [11.0]).label == 1
