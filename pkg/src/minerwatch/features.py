"""Feature pipeline: imputation, statistic extraction, scaling, selection.

Each sample's readings matrix becomes one flat vector of 12 statistics per
event, event-major (feature index = event_index * 12 + statistic_index).
Scaling and importance ranking are fitted on training vectors only; both
record the sample ids they touch into the active leakage audit, so
experiment runs can prove no test sample leaked into fitting.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .forest import RandomForest
from .samples import LabeledSample, RawSample
from .stats import N_STATS, STAT_NAMES, column_statistics


@dataclass(frozen=True)
class FeatureVector:
    """One sample summarized: 12 statistics per event plus its label."""

    values: np.ndarray
    label: tuple[str, str] | None = None  # (task, subclass)
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 1:
            raise ValueError("feature values must be a flat vector")


def feature_names(event_names: Sequence[str]) -> list[str]:
    return [f"{event}.{stat}" for event in event_names for stat in STAT_NAMES]


def impute(sample: RawSample) -> RawSample:
    """Replace NaN cells by the per-event mean of the sample's other readings.

    A column with no usable readings at all becomes zeros.
    """
    readings = sample.readings
    nan_mask = np.isnan(readings)
    if not nan_mask.any():
        return sample
    filled = readings.copy()
    for col in np.flatnonzero(nan_mask.any(axis=0)):
        column = readings[:, col]
        good = ~nan_mask[:, col]
        filled[:, col] = np.where(good, column, column[good].mean() if good.any() else 0.0)
    return RawSample(
        readings=filled,
        timestamps_ms=sample.timestamps_ms,
        rate_hz=sample.rate_hz,
        duration_s=sample.duration_s,
        pid=sample.pid,
        machine_id=sample.machine_id,
        program_id=sample.program_id,
        truncated=sample.truncated,
        column_scales=sample.column_scales,
        event_names=sample.event_names,
    )


def extract(sample: RawSample, label: tuple[str, str] | None = None, provenance: str = "") -> FeatureVector:
    """Statistics of an imputed sample, event-major."""
    stats = column_statistics(sample.readings)  # raises on NaN
    return FeatureVector(stats.reshape(-1), label=label, provenance=provenance)


def extract_labeled(ls: LabeledSample) -> FeatureVector:
    return extract(impute(ls.sample), label=(ls.task, ls.subclass), provenance=ls.sample_id)


def as_matrix(vectors: Sequence[FeatureVector]) -> np.ndarray:
    return np.stack([v.values for v in vectors])


# --- leakage audit -----------------------------------------------------------

@dataclass
class LeakageAudit:
    """Records which sample ids reached scaler fitting and importance ranking."""

    scaler_ids: set[str] = field(default_factory=set)
    ranking_ids: set[str] = field(default_factory=set)
    verified_test_ids: int = 0

    def assert_clean(self, test_ids: Iterable[str]) -> None:
        test_ids = set(test_ids)
        leaked = (self.scaler_ids | self.ranking_ids) & test_ids
        if leaked:
            raise AssertionError(f"test samples leaked into fitting: {sorted(leaked)[:5]}")
        self.verified_test_ids += len(test_ids)


_active_audit: LeakageAudit | None = None


@contextlib.contextmanager
def audit_fits(audit: LeakageAudit):
    global _active_audit
    previous = _active_audit
    _active_audit = audit
    try:
        yield audit
    finally:
        _active_audit = previous


def _record_fit(bucket: str, vectors: Sequence[FeatureVector]) -> None:
    if _active_audit is not None:
        ids = {v.provenance for v in vectors if v.provenance}
        getattr(_active_audit, bucket).update(ids)


# --- standard scaling --------------------------------------------------------

@dataclass(frozen=True)
class ScalerParams:
    """Per-feature training mean and population stddev."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be matching vectors")
        if np.any(self.std < 0):
            raise ValueError("stddev must be non-negative")


def fit_scaler(train: Sequence[FeatureVector]) -> ScalerParams:
    if len(train) < 2:
        raise ValueError("scaler needs at least 2 training vectors")
    _record_fit("scaler_ids", train)
    matrix = as_matrix(train)
    std = matrix.std(axis=0)
    # rounding can leave a ~1e-15 stddev on an exactly constant column, which
    # would then "standardize" to a constant 1; pin those to zero
    constant = np.ptp(matrix, axis=0) == 0.0
    return ScalerParams(mean=matrix.mean(axis=0), std=np.where(constant, 0.0, std))


def apply_scaler(params: ScalerParams, vector: FeatureVector) -> FeatureVector:
    """Standardize one vector; zero-stddev features map to 0."""
    std = np.where(params.std == 0.0, 1.0, params.std)
    values = (vector.values - params.mean) / std
    values = np.where(params.std == 0.0, 0.0, values)
    return FeatureVector(values, label=vector.label, provenance=vector.provenance)


def apply_scaler_many(params: ScalerParams, vectors: Sequence[FeatureVector]) -> list[FeatureVector]:
    return [apply_scaler(params, v) for v in vectors]


# --- importance ranking and selection ----------------------------------------

@dataclass(frozen=True)
class FeatureMask:
    """Boolean selection over features plus the importances that drove it."""

    selected: np.ndarray
    importance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "selected", np.asarray(self.selected, dtype=bool))
        object.__setattr__(self, "importance", np.asarray(self.importance, dtype=np.float64))
        if self.selected.shape != self.importance.shape:
            raise ValueError("selected and importance must have matching shape")
        if np.any(self.importance < 0):
            raise ValueError("importances must be non-negative")
        total = self.importance.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"importances must sum to 1, got {total!r}")
        if not self.selected.any():
            raise ValueError("mask must select at least one feature")

    @property
    def n_selected(self) -> int:
        return int(self.selected.sum())


def rank_features(
    train: Sequence[FeatureVector],
    seed: int,
    y: Sequence[int] | None = None,
    n_trees: int = 100,
) -> FeatureMask:
    """Gini importances from an auxiliary forest fitted on training vectors.

    The default mask keeps features whose importance reaches the mean
    importance.  Labels default to the task level of each vector's label.
    """
    if y is None:
        y_codes = _task_codes(train)
    else:
        y_codes = np.asarray(y, dtype=np.intp)
    if np.unique(y_codes).size < 2:
        raise ValueError("importance undefined: training set has a single class")
    _record_fit("ranking_ids", train)
    forest = RandomForest(
        n_estimators=n_trees,
        max_depth=None,
        max_features="sqrt",
        criterion="gini",
        bootstrap=True,
        random_state=seed,
    )
    forest.fit(as_matrix(train), y_codes)
    importance = forest.feature_importances_
    selected = importance >= importance.mean()
    return FeatureMask(selected=selected, importance=importance)


def _task_codes(vectors: Sequence[FeatureVector]) -> np.ndarray:
    tasks = sorted({v.label[0] for v in vectors if v.label is not None})
    index = {t: i for i, t in enumerate(tasks)}
    return np.array([index[v.label[0]] for v in vectors], dtype=np.intp)


def select_first_psi(mask: FeatureMask, psi_percent: float) -> FeatureMask:
    """Keep the floor(psi% * n) least-important features (ascending order)."""
    if not 0.0 < psi_percent <= 100.0:
        raise ValueError(f"psi must be in (0, 100], got {psi_percent}")
    n = mask.importance.size
    keep = int(np.floor(psi_percent / 100.0 * n))
    if keep < 1:
        raise ValueError(f"psi={psi_percent} selects no features out of {n}")
    ascending = np.argsort(mask.importance, kind="stable")
    selected = np.zeros(n, dtype=bool)
    selected[ascending[:keep]] = True
    return FeatureMask(selected=selected, importance=mask.importance)


def full_mask(n_features: int) -> FeatureMask:
    """All features kept, uniform importances (used before ranking exists)."""
    return FeatureMask(
        selected=np.ones(n_features, dtype=bool),
        importance=np.full(n_features, 1.0 / n_features),
    )


def mask_matrix(mask: FeatureMask, matrix: np.ndarray) -> np.ndarray:
    return matrix[:, mask.selected]


# --- export ------------------------------------------------------------------

def dump_features_csv(vectors: Sequence[FeatureVector], path: Path | str,
                      event_names: Sequence[str]) -> None:
    """Write vectors as CSV for external analysis."""
    path = Path(path)
    header = "sample_id,label," + ",".join(feature_names(event_names))
    lines = [header]
    for v in vectors:
        label = f"{v.label[0]}/{v.label[1]}" if v.label else ""
        lines.append(f"{v.provenance},{label}," + ",".join(repr(float(x)) for x in v.values))
    path.write_text("\n".join(lines) + "\n")
