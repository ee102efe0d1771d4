"""Supervised learning utilities: splits, grid search, metrics, aggregation.

Grid search scores candidates by mean weighted F1 over stratified 5-fold
cross validation and resolves ties toward the first candidate in the
deterministic enumeration order.  Reported results are means over repeated
runs with a 95% Student-t margin of error.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as sstats

from .forest import RandomForest
from .samples import Dataset, LabeledSample
from .svm import SVC

RF_N_ESTIMATORS = (10, 25, 50, 75, 100, 125, 150)
RF_MAX_DEPTHS = (2, 3, 4, 5, 6, 7, None)  # None = unlimited
RF_MAX_FEATURES = ("sqrt", "log2")
RF_CRITERIA = ("gini", "entropy")


@dataclass(frozen=True)
class RFParams:
    n_estimators: int = 100
    max_depth: int | None = None
    max_features: str = "sqrt"
    split_criterion: str = "gini"
    bootstrap: bool = True
    random_state: int = 10

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 2:
            raise ValueError("max_depth must be >= 2 or unlimited")
        if self.max_features not in RF_MAX_FEATURES:
            raise ValueError(f"max_features must be in {RF_MAX_FEATURES}")
        if self.split_criterion not in RF_CRITERIA:
            raise ValueError(f"split_criterion must be in {RF_CRITERIA}")


@dataclass(frozen=True)
class SVMParams:
    kernel: str = "rbf"
    C: float = 1.0
    gamma: float | str = "auto"
    degree: int = 3
    random_state: int = 10

    def __post_init__(self):
        if self.kernel not in ("rbf", "poly", "sigmoid"):
            raise ValueError("kernel must be rbf, poly or sigmoid")
        if not 1e-3 <= self.C <= 1e5:
            raise ValueError("C outside the validated range [1e-3, 1e5]")
        if self.gamma != "auto" and not 1e-7 <= float(self.gamma) <= 1e3:
            raise ValueError("gamma outside the validated range")


def full_rf_grid(random_state: int = 10) -> dict:
    """Every validated RF hyper-parameter combination (slow; 392 candidates)."""
    return {
        "n_estimators": list(RF_N_ESTIMATORS),
        "max_depth": list(RF_MAX_DEPTHS),
        "max_features": list(RF_MAX_FEATURES),
        "split_criterion": list(RF_CRITERIA),
        "bootstrap": [True, False],
        "random_state": [random_state],
    }


def default_rf_grid(random_state: int = 10) -> dict:
    """Small search drawn from the validated values; fits desk-scale budgets.

    The tree counts and depths kept here are the ones grid search actually
    favors on this problem, so shrinking the grid costs little accuracy.
    """
    return {
        "n_estimators": [10, 25],
        "max_depth": [5, None],
        "max_features": ["sqrt"],
        "split_criterion": ["gini"],
        "bootstrap": [True],
        "random_state": [random_state],
    }


def full_svm_grid(random_state: int = 10) -> dict:
    return {
        "kernel": ["rbf", "poly", "sigmoid"],
        "C": [10.0**e for e in range(-3, 6)],
        "gamma": ["auto"] + [10.0**e for e in range(-7, 4)],
        "degree": [3],
        "random_state": [random_state],
    }


def default_svm_grid(random_state: int = 10) -> dict:
    return {
        "kernel": ["rbf"],
        "C": [1.0, 10.0, 100.0],
        "gamma": ["auto", 0.01],
        "degree": [3],
        "random_state": [random_state],
    }


def enumerate_grid(grid: dict) -> list[dict]:
    """Cartesian product in key order; values keep their listed order."""
    keys = list(grid)
    combos = itertools.product(*(grid[k] for k in keys))
    return [dict(zip(keys, combo)) for combo in combos]


# --- stratified partitioning --------------------------------------------------

def _strata_indices(strata: Sequence[str]) -> dict[str, np.ndarray]:
    groups: dict[str, list[int]] = {}
    for i, s in enumerate(strata):
        groups.setdefault(s, []).append(i)
    return {s: np.array(ix, dtype=np.intp) for s, ix in sorted(groups.items())}


def stratified_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive train/test split preserving subclass proportions."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    need = int(np.ceil(1.0 / test_fraction))
    train: list[LabeledSample] = []
    test: list[LabeledSample] = []
    for subclass, idx in _strata_indices([ls.subclass for ls in dataset.samples]).items():
        if idx.size < need:
            raise ValueError(
                f"stratum {subclass!r} has {idx.size} samples, needs >= {need} "
                f"for test fraction {test_fraction}"
            )
        shuffled = rng.permutation(idx)
        n_test = int(np.floor(test_fraction * idx.size + 0.5))
        test.extend(dataset.samples[i] for i in shuffled[:n_test])
        train.extend(dataset.samples[i] for i in shuffled[n_test:])
    train.sort(key=lambda ls: ls.sample_id)
    test.sort(key=lambda ls: ls.sample_id)
    return (
        Dataset(train, dict(dataset.manifest)),
        Dataset(test, dict(dataset.manifest)),
    )


def stratified_kfold(strata: Sequence[str], k: int, seed: int) -> list[np.ndarray]:
    """k disjoint index folds with per-stratum counts differing by <= 1."""
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for stratum, idx in _strata_indices(strata).items():
        if idx.size < k:
            raise ValueError(f"stratum {stratum!r} has {idx.size} samples, needs >= {k}")
        shuffled = rng.permutation(idx)
        for pos, sample_index in enumerate(shuffled):
            folds[pos % k].append(int(sample_index))
    return [np.array(sorted(f), dtype=np.intp) for f in folds]


# --- training -----------------------------------------------------------------

def train_rf(params: RFParams, X: np.ndarray, y: np.ndarray, threads: int = 1) -> RandomForest:
    if np.unique(y).size < 2:
        raise ValueError("need at least 2 classes to train")
    forest = RandomForest(
        n_estimators=params.n_estimators,
        max_depth=params.max_depth,
        max_features=params.max_features,
        criterion=params.split_criterion,
        bootstrap=params.bootstrap,
        random_state=params.random_state,
    )
    return forest.fit(X, y, threads=threads)


def train_svm(params: SVMParams, X: np.ndarray, y: np.ndarray) -> SVC:
    if np.unique(y).size < 2:
        raise ValueError("need at least 2 classes to train")
    model = SVC(
        C=params.C,
        kernel=params.kernel,
        gamma=params.gamma,
        degree=params.degree,
        random_state=params.random_state,
    )
    return model.fit(X, y)


def fit_classifier(kind: str, params: dict, X: np.ndarray, y: np.ndarray, threads: int = 1):
    if kind == "rf":
        return train_rf(RFParams(**params), X, y, threads=threads)
    if kind == "svm":
        return train_svm(SVMParams(**params), X, y)
    raise ValueError(f"unknown classifier {kind!r}")


# --- metrics ------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray

    def scalars(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


def evaluate(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> Metrics:
    """Confusion matrix plus accuracy and weighted precision/recall/F1.

    Per-class ratios with an empty denominator count as 0; weighting is by
    true-class support, which equals macro averaging on balanced data.
    """
    y_true = np.asarray(y_true, dtype=np.intp)
    y_pred = np.asarray(y_pred, dtype=np.intp)
    if y_true.shape != y_pred.shape:
        raise ValueError("label sequences must have equal length")
    for arr, name in ((y_true, "true"), (y_pred, "predicted")):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"{name} label outside 0..{n_classes - 1}")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)

    support = confusion.sum(axis=1).astype(np.float64)
    predicted = confusion.sum(axis=0).astype(np.float64)
    diag = np.diag(confusion).astype(np.float64)
    precision_c = np.divide(diag, predicted, out=np.zeros_like(diag), where=predicted > 0)
    recall_c = np.divide(diag, support, out=np.zeros_like(diag), where=support > 0)
    pr_sum = precision_c + recall_c
    f1_c = np.divide(2 * precision_c * recall_c, pr_sum,
                     out=np.zeros_like(diag), where=pr_sum > 0)
    weights = support / support.sum()
    return Metrics(
        accuracy=float(diag.sum() / support.sum()),
        precision=float(np.sum(weights * precision_c)),
        recall=float(np.sum(weights * recall_c)),
        f1=float(np.sum(weights * f1_c)),
        confusion=confusion,
    )


@dataclass(frozen=True)
class AggregateMetrics:
    mean: dict[str, float]
    margin: dict[str, float]
    confusion: np.ndarray
    n_runs: int

    def summary(self) -> str:
        return "  ".join(
            f"{name}={self.mean[name]:.3f}±{self.margin[name]:.3f}" for name in METRIC_NAMES
        )


def aggregate_runs(runs: Sequence[Metrics], confidence: float = 0.95) -> AggregateMetrics:
    """Mean and t-distribution margin of error over repeated runs."""
    n = len(runs)
    if n < 2:
        raise ValueError("margin of error undefined for fewer than 2 runs")
    t = float(sstats.t.ppf(0.5 + confidence / 2.0, n - 1))
    mean: dict[str, float] = {}
    margin: dict[str, float] = {}
    for name in METRIC_NAMES:
        values = np.array([m.scalars()[name] for m in runs])
        mean[name] = float(values.mean())
        margin[name] = float(t * values.std(ddof=1) / np.sqrt(n))
    confusion = np.sum([m.confusion for m in runs], axis=0)
    return AggregateMetrics(mean=mean, margin=margin, confusion=confusion, n_runs=n)


# --- grid search --------------------------------------------------------------

@dataclass
class GridSearchResult:
    best: dict
    candidates: list[dict]
    mean_scores: list[float]
    fold_scores: list[list[float]] = field(default_factory=list)


def grid_search(
    grid: dict,
    X: np.ndarray,
    y: np.ndarray,
    strata: Sequence[str],
    k: int = 5,
    seed: int = 0,
    classifier: str = "rf",
    threads: int = 1,
) -> GridSearchResult:
    """Pick the candidate with the highest mean CV F1 (ties: first listed)."""
    candidates = enumerate_grid(grid)
    if not candidates:
        raise ValueError("empty parameter grid")
    folds = stratified_kfold(strata, k, seed)
    n_classes = int(np.max(y)) + 1
    mean_scores: list[float] = []
    fold_scores: list[list[float]] = []
    for params in candidates:
        scores = []
        for fold in folds:
            hold = np.zeros(len(y), dtype=bool)
            hold[fold] = True
            model = fit_classifier(classifier, params, X[~hold], y[~hold], threads=threads)
            pred = model.predict(X[hold])
            scores.append(evaluate(y[hold], pred, n_classes).f1)
        fold_scores.append(scores)
        mean_scores.append(float(np.mean(scores)))
    best = candidates[int(np.argmax(mean_scores))]
    return GridSearchResult(best=best, candidates=candidates,
                            mean_scores=mean_scores, fold_scores=fold_scores)


def params_label(params: dict) -> dict[str, str]:
    """JSON-friendly single-level rendering of a parameter dict."""
    return {key: ("none" if value is None else str(value)) for key, value in params.items()}
