import hashlib
import json
import os
from pathlib import Path

import pytest

from minerwatch import synth
from minerwatch.bundle import train_bundle
from minerwatch.cli import (
    EXIT_PID_GONE,
    EXIT_STRICT_MISMATCH,
    EXIT_TRAINING,
    EXIT_USAGE,
    build_parser,
    main,
    parse_args,
    watch_scan,
)
from minerwatch.sampler import ProcessCandidate
from minerwatch.samples import MINING, load_dataset, save_dataset


def _tree_digest(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(str(path.relative_to(root)).encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


def test_synth_small_writes_60_files(tmp_path):
    out = tmp_path / "ds"
    assert main(["synth", "--preset", "small", "--out", str(out)]) == 0
    assert len(list(out.rglob("*.csv"))) == 60
    assert (out / "manifest.json").exists()


def test_synth_same_seed_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--seed", "5", "synth", "--preset", "small", "--out", str(a)]) == 0
    assert main(["--seed", "5", "synth", "--preset", "small", "--out", str(b)]) == 0
    assert _tree_digest(a) == _tree_digest(b)


def test_bad_flags_exit_two(capsys):
    with pytest.raises(SystemExit) as err:
        main(["synth", "--preset", "gigantic", "--out", "x"])
    assert err.value.code == 2


def test_record_nonexistent_pid_exits_four(tmp_path):
    bogus = 3_999_999
    while os.path.isdir(f"/proc/{bogus}"):
        bogus -= 1
    code = main(["record", "--pid", str(bogus), "--duration", "0.2",
                 "--out", str(tmp_path / "s.csv")])
    assert code == EXIT_PID_GONE


@pytest.fixture(scope="module")
def small_ds_dir(tmp_path_factory, small_dataset):
    path = tmp_path_factory.mktemp("ds")
    save_dataset(small_dataset, path)
    return path


def test_train_writes_model(tmp_path, small_ds_dir, capsys):
    out = tmp_path / "model.json"
    code = main(["train", "--dataset", str(small_ds_dir), "--out", str(out)])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert 0.0 <= payload["cv_f1"] <= 1.0
    assert out.exists()


def test_train_twice_same_seed_identical(tmp_path, small_ds_dir):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["--seed", "3", "train", "--dataset", str(small_ds_dir), "--out", str(a)]) == 0
    assert main(["--seed", "3", "train", "--dataset", str(small_ds_dir), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_train_currency_single_subclass_exit_five(tmp_path, small_dataset):
    narrowed = small_dataset.filter(lambda ls: ls.task != MINING or ls.subclass == "btc")
    root = tmp_path / "narrow"
    save_dataset(narrowed, root)
    code = main(["train", "--dataset", str(root), "--target", "currency",
                 "--out", str(tmp_path / "m.json")])
    assert code == EXIT_TRAINING


def test_experiment_binary(tmp_path, small_ds_dir, capsys):
    code = main(["--out-dir", str(tmp_path), "experiment", "--kind", "binary",
                 "--dataset", str(small_ds_dir), "--runs", "2"])
    assert code == 0
    report = json.loads((tmp_path / "experiment-binary" / "report.json").read_text())
    assert 0.0 <= report["configs"]["binary"]["mean"]["f1"] <= 1.0
    assert "binary" in capsys.readouterr().out


def test_experiment_feature_relevance_curve(tmp_path, small_ds_dir):
    code = main(["--out-dir", str(tmp_path), "experiment", "--kind", "feature-relevance",
                 "--dataset", str(small_ds_dir), "--runs", "2", "--psi", "40,100"])
    assert code == 0
    curve = (tmp_path / "experiment-feature-relevance" / "curve.csv").read_text().splitlines()
    assert len(curve) == 3  # header + two rows


def test_experiment_sample_length_curve(tmp_path, small_ds_dir):
    code = main(["--out-dir", str(tmp_path), "experiment", "--kind", "sample-length",
                 "--dataset", str(small_ds_dir), "--runs", "2", "--lengths", "5"])
    assert code == 0
    curve = (tmp_path / "experiment-sample-length" / "curve.csv").read_text().splitlines()
    assert curve[1].startswith("5,")


def test_config_file_defaults_flags_win(tmp_path):
    config = tmp_path / "mw.conf"
    config.write_text("seed=9\nlog-level=warning\n")
    args = parse_args(["--config", str(config), "synth", "--out", "x"])
    assert args.seed == 9
    assert args.log_level == "warning"
    args = parse_args(["--config", str(config), "--seed", "3", "synth", "--out", "x"])
    assert args.seed == 3


def test_out_dir_env_default(monkeypatch, tmp_path):
    monkeypatch.setenv("MINERWATCH_OUT_DIR", str(tmp_path))
    args = parse_args(["synth", "--out", "x"])
    assert args.out_dir == str(tmp_path)


# --- watch ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def watch_bundle(small_dataset):
    grid = {"n_estimators": [10], "max_depth": [5], "max_features": ["sqrt"],
            "split_criterion": ["gini"], "bootstrap": [True], "random_state": [10]}
    return train_bundle(small_dataset, target="binary", grid=grid, seed=1)


def _fake_recorder(dataset):
    by_pid = {100 + i: ls.sample for i, ls in enumerate(dataset.samples)}

    def recorder(pid, rate_hz, duration_s):
        return by_pid[pid].truncate(duration_s)

    return by_pid, recorder


def test_watch_scan_flags_mining_process(small_dataset, watch_bundle):
    by_pid, recorder = _fake_recorder(small_dataset)
    mining_pid = next(pid for pid, ls in zip(by_pid, small_dataset.samples)
                      if ls.task == MINING)
    candidates = [ProcessCandidate(pid=mining_pid, command="xmrig", cpu_share=0.9)]
    verdicts = watch_scan(watch_bundle, candidates, recorder, window_s=5.0, threshold=0.5)
    assert len(verdicts) == 1
    assert verdicts[0]["verdict"] == MINING
    assert verdicts[0]["alert"] is True
    assert verdicts[0]["mining_score"] >= 0.5


def test_watch_scan_bounded_by_candidates(small_dataset, watch_bundle):
    by_pid, recorder = _fake_recorder(small_dataset)
    candidates = [ProcessCandidate(pid=pid, command="p", cpu_share=0.1)
                  for pid in list(by_pid)[:3]]
    verdicts = watch_scan(watch_bundle, candidates, recorder, window_s=5.0, threshold=0.5)
    assert len(verdicts) <= 3


def test_watch_unattainable_threshold_never_alerts(small_dataset, watch_bundle):
    by_pid, recorder = _fake_recorder(small_dataset)
    candidates = [ProcessCandidate(pid=pid, command="p", cpu_share=0.5)
                  for pid in list(by_pid)[:8]]
    verdicts = watch_scan(watch_bundle, candidates, recorder, window_s=5.0, threshold=1.01)
    assert verdicts and not any(v["alert"] for v in verdicts)


def test_watch_strict_machine_mismatch_exit_six(tmp_path, watch_bundle):
    path = tmp_path / "model.json"
    watch_bundle.save(path)  # trained on machine_id "synth", host differs
    code = main(["watch", "--model", str(path), "--strict", "--iterations", "1"])
    assert code == EXIT_STRICT_MISMATCH


def test_watch_bad_model_file(tmp_path):
    path = tmp_path / "nonsense.json"
    path.write_text("{}")
    assert main(["watch", "--model", str(path)]) == EXIT_USAGE


def test_parser_covers_subcommands():
    parser = build_parser()
    for command in ("record", "synth", "train", "experiment", "watch"):
        assert command in parser.format_help()
