"""The six evaluation experiments over any labeled dataset.

Every experiment repeats the same per-run protocol: stratified 90-10
split, per-sample imputation and statistic extraction, scaler fitted on
the training side, importance ranking on the training side, grid search
with stratified 5-fold CV, then test-set metrics.  Runs differ only in
their derived seed (base seed + run index), so any single run can be
re-executed in isolation.  Reports aggregate the runs with 95% margins
and are byte-identical across repetitions apart from the timing block.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import learn
from .features import (
    FeatureMask,
    FeatureVector,
    LeakageAudit,
    apply_scaler_many,
    as_matrix,
    audit_fits,
    extract_labeled,
    fit_scaler,
    mask_matrix,
    rank_features,
    select_first_psi,
)
from .learn import (
    METRIC_NAMES,
    AggregateMetrics,
    GridSearchResult,
    Metrics,
    aggregate_runs,
    default_rf_grid,
    default_svm_grid,
    evaluate,
    stratified_split,
)
from .samples import MINING, NON_MINING, Dataset, LabeledSample

EXPERIMENT_KINDS = (
    "binary",
    "currency",
    "nested",
    "sample_length",
    "feature_relevance",
    "unseen_miner",
)
DEFAULT_LENGTHS = (5, 10, 15, 20, 25, 30)
DEFAULT_PSI = (20.0, 40.0, 60.0, 80.0, 100.0)


@dataclass
class ExperimentSpec:
    kind: str
    runs: int = 10
    seed: int = 0
    classifier: str = "rf"
    test_fraction: float = 0.1
    cv_folds: int = 5
    grid: dict | None = None
    lengths: tuple[int, ...] = DEFAULT_LENGTHS
    psi_list: tuple[float, ...] = DEFAULT_PSI
    program_subclass: str | None = None
    selection: str = "all"  # all | mean | (per-psi handled by feature_relevance)
    threads: int = 1

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.runs < 2:
            raise ValueError("runs must be >= 2")
        if any(length not in DEFAULT_LENGTHS for length in self.lengths):
            raise ValueError(f"lengths must be drawn from {DEFAULT_LENGTHS}")
        if any(not 0.0 < psi <= 100.0 for psi in self.psi_list):
            raise ValueError("psi values must be in (0, 100]")

    def resolved_grid(self) -> dict:
        if self.grid is not None:
            return self.grid
        return default_rf_grid() if self.classifier == "rf" else default_svm_grid()

    def echo(self) -> dict:
        return {
            "kind": self.kind,
            "runs": self.runs,
            "seed": self.seed,
            "classifier": self.classifier,
            "test_fraction": self.test_fraction,
            "cv_folds": self.cv_folds,
            "grid": {k: [("none" if v is None else v) for v in vs]
                     for k, vs in self.resolved_grid().items()},
            "lengths": list(self.lengths),
            "psi_list": list(self.psi_list),
            "program_subclass": self.program_subclass,
            "selection": self.selection,
        }


@dataclass
class ConfigResult:
    aggregate: AggregateMetrics
    label_names: list[str]
    winner_counts: dict[str, dict[str, int]]
    audit: dict

    def to_dict(self) -> dict:
        return {
            "mean": {k: self.aggregate.mean[k] for k in METRIC_NAMES},
            "margin": {k: self.aggregate.margin[k] for k in METRIC_NAMES},
            "n_runs": self.aggregate.n_runs,
            "confusion": self.aggregate.confusion.tolist(),
            "labels": self.label_names,
            "grid_winners": self.winner_counts,
            "audit": self.audit,
        }


@dataclass
class ExperimentReport:
    spec: dict
    configs: dict[str, ConfigResult]
    wall_clock_s: float = 0.0

    def canonical_json(self) -> str:
        """Deterministic rendering; excludes timing so reruns compare equal."""
        body = {
            "spec": self.spec,
            "configs": {name: cfg.to_dict() for name, cfg in self.configs.items()},
        }
        return json.dumps(body, sort_keys=True, indent=2)

    def to_json(self) -> str:
        body = json.loads(self.canonical_json())
        body["wall_clock_s"] = round(self.wall_clock_s, 3)
        return json.dumps(body, sort_keys=True, indent=2)

    def write_files(self, out_dir: Path | str) -> list[Path]:
        """Write report.json plus confusion and curve CSVs; returns paths."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = [out_dir / "report.json"]
        written[0].write_text(self.to_json() + "\n")
        for name, cfg in self.configs.items():
            path = out_dir / f"confusion_{name}.csv"
            lines = ["label," + ",".join(cfg.label_names)]
            for label, row in zip(cfg.label_names, cfg.aggregate.confusion):
                lines.append(label + "," + ",".join(str(int(v)) for v in row))
            path.write_text("\n".join(lines) + "\n")
            written.append(path)
        curve = self._curve_rows()
        if curve:
            path = out_dir / "curve.csv"
            lines = ["x,value,margin"] + [f"{x},{v!r},{m!r}" for x, v, m in curve]
            path.write_text("\n".join(lines) + "\n")
            written.append(path)
        return written

    def _curve_rows(self) -> list[tuple[float, float, float]]:
        kind = self.spec.get("kind")
        rows = []
        if kind == "sample_length":
            for length in self.spec["lengths"]:
                cfg = self.configs[f"len_{length:02d}s"]
                rows.append((length, cfg.aggregate.mean["f1"], cfg.aggregate.margin["f1"]))
        elif kind == "feature_relevance":
            for psi in self.spec["psi_list"]:
                cfg = self.configs[_psi_key(psi)]
                rows.append((psi, cfg.aggregate.mean["f1"], cfg.aggregate.margin["f1"]))
        return rows

    def text_table(self) -> str:
        lines = [f"experiment: {self.spec['kind']}  (runs={self.spec['runs']}, seed={self.spec['seed']})"]
        for name, cfg in self.configs.items():
            lines.append(f"  {name}: {cfg.aggregate.summary()}")
        lines.append(f"  wall clock: {self.wall_clock_s:.1f} s")
        return "\n".join(lines)


def _psi_key(psi: float) -> str:
    return f"psi_{int(round(psi)):03d}"


# --- shared per-run machinery --------------------------------------------------

def _extract_all(dataset: Dataset) -> dict[str, FeatureVector]:
    return {ls.sample_id: extract_labeled(ls) for ls in dataset.samples}


def _label_codes(vectors: Sequence[FeatureVector], names: Sequence[str], level: int) -> np.ndarray:
    index = {name: i for i, name in enumerate(names)}
    return np.array([index[v.label[level]] for v in vectors], dtype=np.intp)


@dataclass
class RunOutcome:
    metrics: Metrics
    winner: dict
    search: GridSearchResult
    mask: FeatureMask
    audit: LeakageAudit


def _run_once(
    train: list[LabeledSample],
    test: list[LabeledSample],
    cache: dict[str, FeatureVector],
    label_names: list[str],
    label_level: int,
    run_seed: int,
    spec: ExperimentSpec,
    psi: float | None = None,
) -> RunOutcome:
    """One split's pipeline: scale, rank, select, grid-search, score."""
    audit = LeakageAudit()
    train_vecs = [cache[ls.sample_id] for ls in train]
    test_vecs = [cache[ls.sample_id] for ls in test]
    y_train = _label_codes(train_vecs, label_names, label_level)
    y_test = _label_codes(test_vecs, label_names, label_level)

    with audit_fits(audit):
        scaler = fit_scaler(train_vecs)
        train_scaled = apply_scaler_many(scaler, train_vecs)
        test_scaled = apply_scaler_many(scaler, test_vecs)
        ranked = rank_features(train_scaled, seed=run_seed, y=y_train)

    if psi is not None:
        mask = select_first_psi(ranked, psi)
    elif spec.selection == "mean":
        mask = ranked
    else:
        mask = FeatureMask(np.ones_like(ranked.selected), ranked.importance)

    X_train = mask_matrix(mask, as_matrix(train_scaled))
    X_test = mask_matrix(mask, as_matrix(test_scaled))
    strata = [ls.subclass for ls in train]
    search = learn.grid_search(
        spec.resolved_grid(), X_train, y_train, strata,
        k=spec.cv_folds, seed=run_seed, classifier=spec.classifier, threads=spec.threads,
    )
    model = learn.fit_classifier(spec.classifier, search.best, X_train, y_train,
                                 threads=spec.threads)
    pred = model.predict(X_test)
    metrics = evaluate(y_test, pred, len(label_names))

    audit.assert_clean(ls.sample_id for ls in test)
    return RunOutcome(metrics, search.best, search, mask, audit)


def _count_winners(winners: list[dict]) -> dict[str, dict[str, int]]:
    counts: dict[str, dict[str, int]] = {}
    for winner in winners:
        for key, value in learn.params_label(winner).items():
            counts.setdefault(key, {})
            counts[key][value] = counts[key].get(value, 0) + 1
    return counts


def _audit_summary(audits: list[LeakageAudit]) -> dict:
    return {
        "clean": True,  # assert_clean raised otherwise
        "fitted_sample_ids": sum(len(a.scaler_ids | a.ranking_ids) for a in audits),
        "verified_test_ids": sum(a.verified_test_ids for a in audits),
    }


def _aggregate_config(outcomes: list[RunOutcome], label_names: list[str]) -> ConfigResult:
    return ConfigResult(
        aggregate=aggregate_runs([o.metrics for o in outcomes]),
        label_names=label_names,
        winner_counts=_count_winners([o.winner for o in outcomes]),
        audit=_audit_summary([o.audit for o in outcomes]),
    )


def _binary_labels() -> list[str]:
    return sorted([MINING, NON_MINING])


def _binary_protocol(dataset: Dataset, spec: ExperimentSpec,
                     cache: dict[str, FeatureVector], psi: float | None = None) -> list[RunOutcome]:
    label_names = _binary_labels()
    outcomes = []
    for run in range(spec.runs):
        run_seed = spec.seed + run
        train_ds, test_ds = stratified_split(dataset, spec.test_fraction, run_seed)
        outcomes.append(_run_once(train_ds.samples, test_ds.samples, cache,
                                  label_names, 0, run_seed, spec, psi=psi))
    return outcomes


# --- the six experiments --------------------------------------------------------

def run_binary(dataset: Dataset, spec: ExperimentSpec) -> ExperimentReport:
    """Mining vs non-mining over the whole dataset."""
    started = time.monotonic()
    tasks = {ls.task for ls in dataset.samples}
    if tasks != {MINING, NON_MINING}:
        raise ValueError(f"binary experiment needs both tasks, found {sorted(tasks)}")
    cache = _extract_all(dataset)
    outcomes = _binary_protocol(dataset, spec, cache)
    report = ExperimentReport(
        spec=spec.echo(),
        configs={"binary": _aggregate_config(outcomes, _binary_labels())},
    )
    report.wall_clock_s = time.monotonic() - started
    return report


def run_currency(dataset: Dataset, spec: ExperimentSpec) -> ExperimentReport:
    """Which currency: multi-class over the mining samples only."""
    started = time.monotonic()
    mining = dataset.filter(lambda ls: ls.task == MINING)
    subclasses = sorted({ls.subclass for ls in mining.samples})
    if len(subclasses) < 2:
        raise ValueError("currency experiment needs >= 2 mining subclasses")
    if any(ls.task != MINING for ls in mining.samples):
        raise AssertionError("non-mining samples survived filtering")
    cache = _extract_all(mining)
    outcomes = []
    for run in range(spec.runs):
        run_seed = spec.seed + run
        train_ds, test_ds = stratified_split(mining, spec.test_fraction, run_seed)
        outcomes.append(_run_once(train_ds.samples, test_ds.samples, cache,
                                  subclasses, 1, run_seed, spec))
    report = ExperimentReport(
        spec=spec.echo(),
        configs={"currency": _aggregate_config(outcomes, subclasses)},
    )
    report.wall_clock_s = time.monotonic() - started
    return report


def run_nested(dataset: Dataset, spec: ExperimentSpec) -> ExperimentReport:
    """Binary stage filters, currency stage labels the predicted positives.

    A mining sample rejected by the first stage stays wrong no matter what
    the second stage would have said, so stage-one errors propagate into
    the final 12-way metrics.  Stage two trains only on the training-side
    mining samples, never on stage-one outputs.
    """
    started = time.monotonic()
    currencies = sorted({ls.subclass for ls in dataset.samples if ls.task == MINING})
    if len(currencies) < 2:
        raise ValueError("nested experiment needs >= 2 mining subclasses")
    nested_names = sorted(currencies + [NON_MINING])
    non_mining_code = nested_names.index(NON_MINING)
    cache = _extract_all(dataset)
    binary_names = _binary_labels()
    mining_code = binary_names.index(MINING)

    outcomes = []
    stage2_winners = []
    for run in range(spec.runs):
        run_seed = spec.seed + run
        train_ds, test_ds = stratified_split(dataset, spec.test_fraction, run_seed)
        audit = LeakageAudit()

        train_vecs = [cache[ls.sample_id] for ls in train_ds.samples]
        test_vecs = [cache[ls.sample_id] for ls in test_ds.samples]
        y_bin_train = _label_codes(train_vecs, binary_names, 0)

        with audit_fits(audit):
            scaler = fit_scaler(train_vecs)
            train_scaled = apply_scaler_many(scaler, train_vecs)
            test_scaled = apply_scaler_many(scaler, test_vecs)
            ranked = rank_features(train_scaled, seed=run_seed, y=y_bin_train)
        mask = FeatureMask(np.ones_like(ranked.selected), ranked.importance)
        X_train = mask_matrix(mask, as_matrix(train_scaled))
        X_test = mask_matrix(mask, as_matrix(test_scaled))
        strata = [ls.subclass for ls in train_ds.samples]
        stage1 = learn.grid_search(spec.resolved_grid(), X_train, y_bin_train, strata,
                                   k=spec.cv_folds, seed=run_seed,
                                   classifier=spec.classifier, threads=spec.threads)
        model1 = learn.fit_classifier(spec.classifier, stage1.best, X_train, y_bin_train,
                                      threads=spec.threads)

        mining_train = [ls for ls in train_ds.samples if ls.task == MINING]
        mining_vecs = [cache[ls.sample_id] for ls in mining_train]
        y_cur_train = _label_codes(mining_vecs, currencies, 1)
        with audit_fits(audit):
            scaler2 = fit_scaler(mining_vecs)
            mining_scaled = apply_scaler_many(scaler2, mining_vecs)
            ranked2 = rank_features(mining_scaled, seed=run_seed, y=y_cur_train)
        mask2 = FeatureMask(np.ones_like(ranked2.selected), ranked2.importance)
        X2_train = mask_matrix(mask2, as_matrix(mining_scaled))
        strata2 = [ls.subclass for ls in mining_train]
        stage2 = learn.grid_search(spec.resolved_grid(), X2_train, y_cur_train, strata2,
                                   k=spec.cv_folds, seed=run_seed,
                                   classifier=spec.classifier, threads=spec.threads)
        model2 = learn.fit_classifier(spec.classifier, stage2.best, X2_train, y_cur_train,
                                      threads=spec.threads)

        pred_bin = model1.predict(X_test)
        pred_final = np.full(len(test_vecs), non_mining_code, dtype=np.intp)
        flagged = np.flatnonzero(pred_bin == mining_code)
        if flagged.size:
            test2 = apply_scaler_many(scaler2, [test_vecs[i] for i in flagged])
            pred_cur = model2.predict(mask_matrix(mask2, as_matrix(test2)))
            for where, cur in zip(flagged, pred_cur):
                pred_final[where] = nested_names.index(currencies[cur])

        y_true = np.array([nested_names.index(ls.subclass if ls.task == MINING else NON_MINING)
                           for ls in test_ds.samples], dtype=np.intp)
        metrics = evaluate(y_true, pred_final, len(nested_names))
        audit.assert_clean(ls.sample_id for ls in test_ds.samples)
        outcomes.append(RunOutcome(metrics, stage1.best, stage1, mask, audit))
        stage2_winners.append(stage2.best)

    config = _aggregate_config(outcomes, nested_names)
    config.winner_counts = {
        "stage1": _count_winners([o.winner for o in outcomes]),
        "stage2": _count_winners(stage2_winners),
    }
    report = ExperimentReport(spec=spec.echo(), configs={"nested": config})
    report.wall_clock_s = time.monotonic() - started
    return report


def truncate_dataset(dataset: Dataset, length_s: float) -> Dataset:
    samples = [
        LabeledSample(ls.sample_id, ls.sample.truncate(length_s), ls.task, ls.subclass)
        for ls in dataset.samples
    ]
    return Dataset(samples, dict(dataset.manifest))


def run_sample_length(dataset: Dataset, spec: ExperimentSpec) -> ExperimentReport:
    """Binary protocol at several window lengths (seconds)."""
    started = time.monotonic()
    shortest = min(ls.sample.duration_s for ls in dataset.samples)
    for length in spec.lengths:
        if length > shortest:
            raise ValueError(f"length {length} s exceeds shortest sample ({shortest} s)")
    configs: dict[str, ConfigResult] = {}
    for length in spec.lengths:
        shortened = truncate_dataset(dataset, float(length))
        cache = _extract_all(shortened)
        outcomes = _binary_protocol(shortened, spec, cache)
        configs[f"len_{length:02d}s"] = _aggregate_config(outcomes, _binary_labels())
    report = ExperimentReport(spec=spec.echo(), configs=configs)
    report.wall_clock_s = time.monotonic() - started
    return report


def run_feature_relevance(dataset: Dataset, spec: ExperimentSpec) -> ExperimentReport:
    """Binary protocol restricted to the psi% least-important features."""
    started = time.monotonic()
    if not spec.psi_list:
        raise ValueError("psi list must be non-empty")
    cache = _extract_all(dataset)
    configs: dict[str, ConfigResult] = {}
    for psi in spec.psi_list:
        outcomes = _binary_protocol(dataset, spec, cache, psi=psi)
        configs[_psi_key(psi)] = _aggregate_config(outcomes, _binary_labels())
    report = ExperimentReport(spec=spec.echo(), configs=configs)
    report.wall_clock_s = time.monotonic() - started
    return report


def _program_split(dataset: Dataset, designated: str, prog_train: str, prog_test: str,
                   test_fraction: float, seed: int) -> tuple[list[LabeledSample], list[LabeledSample]]:
    """Stratified split where the designated subclass trains on one program
    and tests on another; every (subclass, program) group is partitioned with
    its own derived seed so a group's split is stable across pairings."""
    groups: dict[tuple[str, str], list[LabeledSample]] = {}
    for ls in dataset.samples:
        groups.setdefault((ls.subclass, ls.sample.program_id), []).append(ls)
    train: list[LabeledSample] = []
    test: list[LabeledSample] = []
    for gi, (key, members) in enumerate(sorted(groups.items())):
        subclass, program = key
        members = sorted(members, key=lambda ls: ls.sample_id)
        rng = np.random.default_rng(np.random.SeedSequence((seed, gi)))
        order = rng.permutation(len(members))
        n_test = int(np.floor(test_fraction * len(members) + 0.5))
        test_side = [members[i] for i in order[:n_test]]
        train_side = [members[i] for i in order[n_test:]]
        if subclass != designated:
            train.extend(train_side)
            test.extend(test_side)
            continue
        if program == prog_train:
            train.extend(train_side)
        if program == prog_test:
            test.extend(test_side)
    train.sort(key=lambda ls: ls.sample_id)
    test.sort(key=lambda ls: ls.sample_id)
    return train, test


def run_unseen_miner(dataset: Dataset, spec: ExperimentSpec) -> ExperimentReport:
    """Binary task trained on one program's samples, tested on another's.

    The designated subclass (the one recorded with several programs) keeps
    only program X samples on the training side and program Y samples on
    the testing side, for every ordered pair (X, Y)."""
    started = time.monotonic()
    by_subclass: dict[str, set[str]] = {}
    for ls in dataset.samples:
        by_subclass.setdefault(ls.subclass, set()).add(ls.sample.program_id)
    multi = sorted(s for s, programs in by_subclass.items() if len(programs) > 1)
    designated = spec.program_subclass or (multi[0] if multi else None)
    if designated is None or len(by_subclass.get(designated, ())) < 2:
        raise ValueError("unseen-miner experiment needs a subclass with >= 2 programs")
    programs = sorted(by_subclass[designated])
    cache = _extract_all(dataset)
    label_names = _binary_labels()

    configs: dict[str, ConfigResult] = {}
    for prog_train in programs:
        for prog_test in programs:
            if prog_train == prog_test:
                continue
            outcomes = []
            for run in range(spec.runs):
                run_seed = spec.seed + run
                train, test = _program_split(dataset, designated, prog_train, prog_test,
                                             spec.test_fraction, run_seed)
                outcomes.append(_run_once(train, test, cache, label_names, 0,
                                          run_seed, spec))
            configs[f"{prog_train}_{prog_test}"] = _aggregate_config(outcomes, label_names)
    report = ExperimentReport(spec=spec.echo(), configs=configs)
    report.wall_clock_s = time.monotonic() - started
    return report


def run_experiment(dataset: Dataset, spec: ExperimentSpec) -> ExperimentReport:
    runner = {
        "binary": run_binary,
        "currency": run_currency,
        "nested": run_nested,
        "sample_length": run_sample_length,
        "feature_relevance": run_feature_relevance,
        "unseen_miner": run_unseen_miner,
    }[spec.kind]
    return runner(dataset, spec)


def shuffle_labels(dataset: Dataset, seed: int) -> Dataset:
    """Chance-level control: permute the (task, subclass) labels across samples."""
    rng = np.random.default_rng(seed)
    labels = [(ls.task, ls.subclass) for ls in dataset.samples]
    order = rng.permutation(len(labels))
    shuffled = [
        LabeledSample(ls.sample_id, ls.sample, labels[j][0], labels[j][1])
        for ls, j in zip(dataset.samples, order)
    ]
    return Dataset(shuffled, dict(dataset.manifest))
