import numpy as np
import pytest

from minerwatch import learn
from minerwatch.learn import (
    Metrics,
    RFParams,
    SVMParams,
    aggregate_runs,
    enumerate_grid,
    evaluate,
    grid_search,
    stratified_kfold,
    stratified_split,
    train_rf,
)
from minerwatch.samples import Dataset, LabeledSample

from conftest import make_sample


def _dataset(per_subclass: dict[str, int], rows=10, seed=0):
    rng = np.random.default_rng(seed)
    manifest, samples = {}, []
    for subclass, count in per_subclass.items():
        task = "mining" if subclass.startswith("m") else "non-mining"
        manifest[subclass] = task
        for i in range(count):
            samples.append(LabeledSample(
                f"{subclass}-{i:03d}",
                make_sample(rng.uniform(0, 100, (rows, 28))),
                task,
                subclass,
            ))
    return Dataset(samples, manifest)


# --- stratified split ------------------------------------------------------------

def test_split_fifty_per_subclass_gives_45_5():
    ds = _dataset({"m1": 50, "u1": 50}, rows=5)
    train, test = stratified_split(ds, 0.1, seed=3)
    assert train.subclass_counts() == {"m1": 45, "u1": 45}
    assert test.subclass_counts() == {"m1": 5, "u1": 5}


def test_split_half_on_two_member_strata():
    ds = _dataset({"m1": 2, "u1": 2}, rows=5)
    train, test = stratified_split(ds, 0.5, seed=0)
    assert train.subclass_counts() == {"m1": 1, "u1": 1}
    assert test.subclass_counts() == {"m1": 1, "u1": 1}


def test_split_disjoint_exhaustive_and_seeded():
    ds = _dataset({"m1": 20, "m2": 20, "u1": 20}, rows=5)
    train1, test1 = stratified_split(ds, 0.25, seed=7)
    train2, test2 = stratified_split(ds, 0.25, seed=7)
    ids = lambda d: [ls.sample_id for ls in d.samples]
    assert ids(train1) == ids(train2) and ids(test1) == ids(test2)
    assert set(ids(train1)).isdisjoint(ids(test1))
    assert sorted(ids(train1) + ids(test1)) == sorted(ls.sample_id for ls in ds.samples)
    _, test3 = stratified_split(ds, 0.25, seed=8)
    assert ids(test3) != ids(test1)


def test_split_small_stratum_fatal_names_it():
    ds = _dataset({"m1": 3, "u1": 50}, rows=5)
    with pytest.raises(ValueError, match="m1"):
        stratified_split(ds, 0.1, seed=0)


# --- stratified k-fold ------------------------------------------------------------

def test_kfold_balanced_per_stratum():
    strata = ["a"] * 45 + ["b"] * 45
    folds = stratified_kfold(strata, 5, seed=1)
    for fold in folds:
        labels = [strata[i] for i in fold]
        assert labels.count("a") == 9 and labels.count("b") == 9


def test_kfold_rejects_k_below_two():
    with pytest.raises(ValueError):
        stratified_kfold(["a"] * 10, 1, seed=0)


def test_kfold_rejects_small_stratum():
    with pytest.raises(ValueError, match="tiny"):
        stratified_kfold(["tiny"] * 3 + ["big"] * 50, 5, seed=0)


def test_kfold_union_disjoint_property():
    rng = np.random.default_rng(2)
    for trial in range(10):
        sizes = rng.integers(4, 30, size=3)
        strata = [s for name, size in zip("abc", sizes) for s in [name] * int(size)]
        k = 4
        if min(sizes) < k:
            continue
        folds = stratified_kfold(strata, k, seed=trial)
        together = np.concatenate(folds)
        assert len(together) == len(strata)
        assert len(np.unique(together)) == len(strata)
        counts = [len(f) for f in folds]
        for name in "abc":
            per = [sum(1 for i in f if strata[i] == name) for f in folds]
            assert max(per) - min(per) <= 1


# --- params -----------------------------------------------------------------------

def test_rf_params_validation():
    with pytest.raises(ValueError):
        RFParams(max_depth=1)
    with pytest.raises(ValueError):
        RFParams(max_features="all")
    with pytest.raises(ValueError):
        RFParams(split_criterion="mse")
    assert RFParams().random_state == 10


def test_svm_params_validation():
    with pytest.raises(ValueError):
        SVMParams(kernel="linear")
    with pytest.raises(ValueError):
        SVMParams(C=1e6)
    with pytest.raises(ValueError):
        SVMParams(gamma=1e4)
    assert SVMParams().gamma == "auto"


def test_grid_values_within_validated_sets():
    grid = learn.full_rf_grid()
    assert grid["n_estimators"] == [10, 25, 50, 75, 100, 125, 150]
    assert grid["max_depth"] == [2, 3, 4, 5, 6, 7, None]
    assert len(enumerate_grid(grid)) == 7 * 7 * 2 * 2 * 2
    small = learn.default_rf_grid()
    for key, values in small.items():
        assert set(values) <= set(grid[key]), key


# --- metrics ----------------------------------------------------------------------

def test_evaluate_perfect():
    m = evaluate([0, 1, 2, 1], [0, 1, 2, 1], 3)
    assert m.accuracy == m.precision == m.recall == m.f1 == 1.0


def test_evaluate_binary_hand_oracle():
    m = evaluate([1, 1, 0, 0], [1, 0, 0, 0], 2)
    assert m.accuracy == 0.75
    # class 1: tp=1 fp=0 fn=1
    assert m.confusion[1, 1] == 1 and m.confusion[1, 0] == 1 and m.confusion[0, 1] == 0
    diag = np.diag(m.confusion)
    assert diag[1] / m.confusion[:, 1].sum() == 1.0   # precision of class 1
    assert diag[1] / m.confusion[1, :].sum() == 0.5   # recall of class 1


def test_evaluate_three_class_fixture_exact():
    y_true = [0] * 5 + [1] * 3 + [2] * 2
    y_pred = [0, 0, 0, 1, 2, 1, 1, 0, 2, 2]
    m = evaluate(y_true, y_pred, 3)
    # hand computation: support (5,3,2); per-class precision (3/4, 2/3, 2/3),
    # recall (3/5, 2/3, 1), f1 (2/3, 2/3, 4/5)
    assert m.accuracy == 0.7
    assert m.precision == pytest.approx(17 / 24, abs=1e-15)
    assert m.recall == pytest.approx(0.7, abs=1e-15)
    assert m.f1 == pytest.approx(52 / 75, abs=1e-15)
    np.testing.assert_array_equal(m.confusion, [[3, 1, 1], [1, 2, 0], [0, 0, 2]])


def test_evaluate_row_sums_are_support():
    rng = np.random.default_rng(3)
    y_true = rng.integers(0, 4, 100)
    y_pred = rng.integers(0, 4, 100)
    m = evaluate(y_true, y_pred, 4)
    np.testing.assert_array_equal(m.confusion.sum(axis=1), np.bincount(y_true, minlength=4))
    assert m.recall == pytest.approx(m.accuracy)  # weighted recall identity
    assert m.accuracy == np.trace(m.confusion) / m.confusion.sum()


def test_evaluate_label_out_of_range_fatal():
    with pytest.raises(ValueError):
        evaluate([0, 3], [0, 1], 3)
    with pytest.raises(ValueError):
        evaluate([0, 1], [0, -1], 3)


def test_evaluate_zero_denominator_counts_as_zero():
    m = evaluate([0, 0], [1, 1], 2)  # class 0 never predicted, class 1 no support
    assert m.precision == 0.0 and m.recall == 0.0 and m.f1 == 0.0


# --- aggregation -------------------------------------------------------------------

def _metric(value):
    return Metrics(value, value, value, value, np.array([[1, 0], [0, 1]]))


def test_aggregate_identical_runs_zero_margin():
    agg = aggregate_runs([_metric(0.999)] * 10)
    assert agg.mean["f1"] == pytest.approx(0.999)
    assert agg.margin["f1"] == 0.0


def test_aggregate_known_margin():
    agg = aggregate_runs([_metric(1.0)] * 9 + [_metric(0.9)])
    assert agg.mean["accuracy"] == pytest.approx(0.99)
    assert agg.margin["accuracy"] == pytest.approx(0.02262, abs=5e-4)


def test_aggregate_confusion_is_elementwise_sum():
    agg = aggregate_runs([_metric(1.0)] * 10)
    np.testing.assert_array_equal(agg.confusion, [[10, 0], [0, 10]])


def test_aggregate_needs_two_runs():
    with pytest.raises(ValueError):
        aggregate_runs([_metric(1.0)])


# --- grid search -------------------------------------------------------------------

def _parity_data(n=120, seed=4):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, size=(n, 3)).astype(float) + rng.normal(0, 0.01, (n, 3))
    y = (np.round(X).sum(axis=1) % 2).astype(int)
    strata = [str(label) for label in y]
    return X, y, strata


def test_grid_single_candidate_returned(tiny_grid):
    X, y, strata = _parity_data()
    result = grid_search(tiny_grid, X, y, strata, k=5, seed=0)
    assert result.best == enumerate_grid(tiny_grid)[0]
    assert len(result.mean_scores) == 1


def test_grid_prefers_deeper_trees_on_parity():
    X, y, strata = _parity_data()
    grid = {
        "n_estimators": [15],
        "max_depth": [2, None],
        "max_features": ["sqrt"],
        "split_criterion": ["gini"],
        "bootstrap": [True],
        "random_state": [10],
    }
    result = grid_search(grid, X, y, strata, k=5, seed=0)
    assert result.best["max_depth"] is None
    shallow, deep = result.mean_scores
    assert deep > shallow
    assert result.mean_scores == [pytest.approx(np.mean(f)) for f in result.fold_scores]


def test_grid_tie_takes_first_enumerated():
    X, y, strata = _parity_data()
    grid = {
        "n_estimators": [10, 10],  # identical candidates, guaranteed tie
        "max_depth": [None],
        "max_features": ["sqrt"],
        "split_criterion": ["gini"],
        "bootstrap": [True],
        "random_state": [10],
    }
    result = grid_search(grid, X, y, strata, k=4, seed=0)
    assert result.mean_scores[0] == result.mean_scores[1]
    assert result.best is result.candidates[0]


def test_grid_empty_fatal():
    with pytest.raises(ValueError):
        grid_search({"n_estimators": []}, np.zeros((4, 2)), np.array([0, 1, 0, 1]),
                    ["a", "b", "a", "b"], k=2, seed=0)


def test_train_rf_needs_two_classes():
    with pytest.raises(ValueError):
        train_rf(RFParams(n_estimators=1), np.zeros((4, 2)), np.zeros(4, dtype=int))
