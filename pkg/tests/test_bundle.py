import json

import numpy as np
import pytest

from minerwatch.bundle import FORMAT_VERSION, BundleError, ModelBundle, train_bundle
from minerwatch.samples import MINING


@pytest.fixture(scope="module")
def tiny_grid_m():
    return {
        "n_estimators": [10],
        "max_depth": [5],
        "max_features": ["sqrt"],
        "split_criterion": ["gini"],
        "bootstrap": [True],
        "random_state": [10],
    }


@pytest.fixture(scope="module")
def binary_bundle(small_dataset, tiny_grid_m):
    return train_bundle(small_dataset, target="binary", grid=tiny_grid_m, seed=4)


def test_train_bundle_provenance(binary_bundle):
    assert binary_bundle.label_names == ["mining", "non-mining"]
    assert 0.0 <= binary_bundle.provenance["cv_f1"] <= 1.0
    assert binary_bundle.provenance["grid_winner"]["n_estimators"] == "10"
    assert binary_bundle.provenance["machine_id"] == "synth"
    assert len(binary_bundle.event_names) == 28


def test_bundle_round_trip(tmp_path, binary_bundle, small_dataset):
    path = tmp_path / "model.json"
    binary_bundle.save(path)
    loaded = ModelBundle.load(path)
    for ls in small_dataset.samples[::9]:
        assert loaded.predict_sample(ls.sample) == binary_bundle.predict_sample(ls.sample)


def test_bundle_predicts_training_classes(binary_bundle, small_dataset):
    hits = 0
    for ls in small_dataset.samples:
        label, score = binary_bundle.predict_sample(ls.sample)
        assert 0.0 <= score <= 1.0
        if label == ls.task:
            hits += 1
        if ls.task == MINING:
            assert (score >= 0.5) == (label == MINING)
    assert hits / len(small_dataset.samples) >= 0.95


def test_bundle_bytes_identical_for_same_seed(tmp_path, small_dataset, tiny_grid_m):
    a = train_bundle(small_dataset, target="binary", grid=tiny_grid_m, seed=4)
    b = train_bundle(small_dataset, target="binary", grid=tiny_grid_m, seed=4)
    pa, pb = tmp_path / "a.json", tmp_path / "b.json"
    a.save(pa)
    b.save(pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_version_mismatch_refused(tmp_path, binary_bundle):
    path = tmp_path / "model.json"
    binary_bundle.save(path)
    data = json.loads(path.read_text())
    data["format_version"] = FORMAT_VERSION + 1
    path.write_text(json.dumps(data))
    with pytest.raises(BundleError, match="format"):
        ModelBundle.load(path)


def test_currency_bundle(small_dataset, tiny_grid_m):
    bundle = train_bundle(small_dataset, target="currency", grid=tiny_grid_m, seed=4)
    assert bundle.label_names == ["bcd", "btc", "btm"]
    label, score = bundle.predict_sample(small_dataset.samples[0].sample)
    assert label in bundle.label_names
    assert score == pytest.approx(max(score, 0.0))


def test_currency_needs_multiple_subclasses(small_dataset, tiny_grid_m):
    narrowed = small_dataset.filter(lambda ls: ls.task != MINING or ls.subclass == "btc")
    with pytest.raises(ValueError, match="2 classes"):
        train_bundle(narrowed, target="currency", grid=tiny_grid_m)


def test_svm_bundle_round_trip(tmp_path, small_dataset):
    grid = {"kernel": ["rbf"], "C": [10.0], "gamma": ["auto"], "degree": [3],
            "random_state": [10]}
    bundle = train_bundle(small_dataset, target="binary", classifier="svm",
                          grid=grid, seed=4)
    path = tmp_path / "svm.json"
    bundle.save(path)
    loaded = ModelBundle.load(path)
    for ls in small_dataset.samples[::7]:
        assert loaded.predict_sample(ls.sample) == bundle.predict_sample(ls.sample)
        label, score = loaded.predict_sample(ls.sample)
        assert score in (0.0, 1.0)  # hard-label classifier


def test_event_set_mismatch_rejected(binary_bundle, small_dataset):
    sample = small_dataset.samples[0].sample
    clipped = sample.truncate(sample.duration_s)
    object.__setattr__(clipped, "event_names", sample.event_names[:10])
    object.__setattr__(clipped, "readings", clipped.readings[:, :10])
    with pytest.raises(BundleError, match="event"):
        binary_bundle.predict_sample(clipped)


def test_mean_selection_bundle(small_dataset, tiny_grid_m):
    bundle = train_bundle(small_dataset, target="binary", grid=tiny_grid_m,
                          seed=4, selection="mean")
    assert 1 <= bundle.mask.n_selected < 336
