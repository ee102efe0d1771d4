"""Trained-model persistence: scaler, feature mask, classifier, provenance.

A bundle is a single versioned JSON file.  Loading refuses any other
format version.  Files are byte-identical for identical training inputs
and seeds (no timestamps inside).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import learn
from .features import (
    FeatureMask,
    FeatureVector,
    ScalerParams,
    apply_scaler,
    apply_scaler_many,
    as_matrix,
    extract,
    extract_labeled,
    fit_scaler,
    impute,
    mask_matrix,
    rank_features,
    select_first_psi,
)
from .forest import DecisionTree, RandomForest, TreeNode
from .samples import MINING, Dataset, RawSample
from .svm import SVC, BinarySMO

FORMAT_VERSION = 1


class BundleError(Exception):
    pass


def _forest_to_dict(model: RandomForest) -> dict:
    return {
        "n_estimators": model.n_estimators,
        "max_depth": model.max_depth,
        "max_features": model.max_features,
        "criterion": model.criterion,
        "bootstrap": model.bootstrap,
        "random_state": model.random_state,
        "n_classes": model.n_classes_,
        "trees": [tree.root.to_dict() for tree in model.trees],
    }


def _forest_from_dict(data: dict) -> RandomForest:
    model = RandomForest(
        n_estimators=data["n_estimators"],
        max_depth=data["max_depth"],
        max_features=data["max_features"],
        criterion=data["criterion"],
        bootstrap=data["bootstrap"],
        random_state=data["random_state"],
    )
    model.n_classes_ = data["n_classes"]
    model.trees = []
    for tree_data in data["trees"]:
        tree = DecisionTree(n_classes=model.n_classes_)
        tree.root = TreeNode.from_dict(tree_data)
        model.trees.append(tree)
    return model


def _svm_to_dict(model: SVC) -> dict:
    machines = []
    for (a, b), smo in sorted(model.machines.items()):
        machines.append({
            "pair": [a, b],
            "b": smo.b,
            "gamma": smo.gamma,
            "n_features": int(smo.support_X.shape[1]),
            "support_x": smo.support_X.tolist(),
            "support_ay": smo.support_ay.tolist(),
            "converged": smo.converged,
        })
    return {
        "C": model.C,
        "kernel": model.kernel,
        "gamma": model.gamma if model.gamma == "auto" else float(model.gamma),
        "degree": model.degree,
        "random_state": model.random_state,
        "n_classes": model.n_classes_,
        "machines": machines,
    }


def _svm_from_dict(data: dict) -> SVC:
    model = SVC(
        C=data["C"],
        kernel=data["kernel"],
        gamma=data["gamma"],
        degree=data["degree"],
        random_state=data["random_state"],
    )
    model.n_classes_ = data["n_classes"]
    model.machines = {}
    for m in data["machines"]:
        smo = BinarySMO(data["C"], data["kernel"], m["gamma"], data["degree"])
        smo.b = m["b"]
        smo.support_X = np.array(m["support_x"], dtype=np.float64).reshape(-1, m["n_features"])
        smo.support_ay = np.array(m["support_ay"], dtype=np.float64)
        smo.converged = m["converged"]
        model.machines[tuple(m["pair"])] = smo
    return model


@dataclass
class ModelBundle:
    classifier_kind: str
    label_names: list[str]
    event_names: tuple[str, ...]
    rate_hz: float
    duration_s: float
    scaler: ScalerParams
    mask: FeatureMask
    model: RandomForest | SVC
    provenance: dict

    def predict_vector(self, vector: FeatureVector) -> tuple[str, float]:
        """Label plus mining score for one (unscaled) feature vector.

        The score is the forest's mining-vote fraction, an operational
        extension beyond the hard-label classifier (SVM yields 0/1).
        """
        scaled = apply_scaler(self.scaler, vector)
        X = mask_matrix(self.mask, scaled.values.reshape(1, -1))
        if isinstance(self.model, RandomForest):
            fractions = self.model.vote_fractions(X)[0]
            label = self.label_names[int(np.argmax(fractions))]
            score = self._mining_score(fractions)
        else:
            label = self.label_names[int(self.model.predict(X)[0])]
            score = 1.0 if self._is_mining_label(label) else 0.0
        return label, score

    def predict_sample(self, sample: RawSample) -> tuple[str, float]:
        if tuple(sample.event_names) != tuple(self.event_names):
            raise BundleError("sample events do not match the model's event set")
        return self.predict_vector(extract(impute(sample)))

    def _is_mining_label(self, label: str) -> bool:
        return label == MINING or (MINING not in self.label_names)

    def _mining_score(self, fractions: np.ndarray) -> float:
        if MINING in self.label_names:
            return float(fractions[self.label_names.index(MINING)])
        return float(np.max(fractions))

    def to_dict(self) -> dict:
        model_data = (_forest_to_dict(self.model) if self.classifier_kind == "rf"
                      else _svm_to_dict(self.model))
        return {
            "format_version": FORMAT_VERSION,
            "classifier_kind": self.classifier_kind,
            "label_names": self.label_names,
            "event_names": list(self.event_names),
            "rate_hz": self.rate_hz,
            "duration_s": self.duration_s,
            "scaler": {"mean": self.scaler.mean.tolist(), "std": self.scaler.std.tolist()},
            "mask": {
                "selected": self.mask.selected.astype(int).tolist(),
                "importance": self.mask.importance.tolist(),
            },
            "model": model_data,
            "provenance": self.provenance,
        }

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "ModelBundle":
        data = json.loads(Path(path).read_text())
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise BundleError(
                f"unsupported bundle format {version!r} (expected {FORMAT_VERSION})"
            )
        kind = data["classifier_kind"]
        model = _forest_from_dict(data["model"]) if kind == "rf" else _svm_from_dict(data["model"])
        return cls(
            classifier_kind=kind,
            label_names=data["label_names"],
            event_names=tuple(data["event_names"]),
            rate_hz=data["rate_hz"],
            duration_s=data["duration_s"],
            scaler=ScalerParams(np.array(data["scaler"]["mean"]), np.array(data["scaler"]["std"])),
            mask=FeatureMask(
                np.array(data["mask"]["selected"], dtype=bool),
                np.array(data["mask"]["importance"]),
            ),
            model=model,
            provenance=data["provenance"],
        )


def train_bundle(
    dataset: Dataset,
    target: str = "binary",
    classifier: str = "rf",
    grid: dict | None = None,
    seed: int = 0,
    selection: str = "all",
    psi: float | None = None,
    cv_folds: int = 5,
    threads: int = 1,
) -> ModelBundle:
    """Fit the full pipeline on a dataset and package it for deployment.

    ``target`` picks the label level: ``binary`` (task) or ``currency``
    (mining subclasses only).  The grid winner and its CV score land in the
    bundle provenance.
    """
    if target == "currency":
        dataset = dataset.filter(lambda ls: ls.task == MINING)
        label_names = sorted({ls.subclass for ls in dataset.samples})
        level = 1
    elif target == "binary":
        label_names = sorted({ls.task for ls in dataset.samples})
        level = 0
    else:
        raise ValueError(f"unknown target {target!r}")
    if len(label_names) < 2:
        raise ValueError(f"{target} training needs >= 2 classes, found {label_names}")
    if not dataset.samples:
        raise ValueError("empty dataset")

    vectors = [extract_labeled(ls) for ls in dataset.samples]
    index = {name: i for i, name in enumerate(label_names)}
    y = np.array([index[v.label[level]] for v in vectors], dtype=np.intp)

    scaler = fit_scaler(vectors)
    scaled = apply_scaler_many(scaler, vectors)
    ranked = rank_features(scaled, seed=seed, y=y)
    if psi is not None:
        mask = select_first_psi(ranked, psi)
    elif selection == "mean":
        mask = ranked
    else:
        mask = FeatureMask(np.ones_like(ranked.selected), ranked.importance)

    X = mask_matrix(mask, as_matrix(scaled))
    strata = [ls.subclass for ls in dataset.samples]
    if grid is None:
        grid = learn.default_rf_grid() if classifier == "rf" else learn.default_svm_grid()
    search = learn.grid_search(grid, X, y, strata, k=cv_folds, seed=seed,
                               classifier=classifier, threads=threads)
    model = learn.fit_classifier(classifier, search.best, X, y, threads=threads)

    sample0 = dataset.samples[0].sample
    return ModelBundle(
        classifier_kind=classifier,
        label_names=label_names,
        event_names=tuple(sample0.event_names),
        rate_hz=sample0.rate_hz,
        duration_s=sample0.duration_s,
        scaler=scaler,
        mask=mask,
        model=model,
        provenance={
            "seed": seed,
            "target": target,
            "machine_id": sample0.machine_id,
            "grid_winner": learn.params_label(search.best),
            "cv_f1": max(search.mean_scores),
            "n_training_samples": len(dataset.samples),
        },
    )
