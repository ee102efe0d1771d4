"""Sample and dataset types plus their on-disk CSV/JSON layout.

A dataset on disk looks like::

    <root>/manifest.json                        {"btc": "mining", ...}
    <root>/<task>/<subclass>/<sample_id>.csv    one recording per file

Each sample CSV starts with a metadata comment line, then a header naming
the event columns in canonical order, then one row per reading.  Missing
counter values are spelled ``NaN`` and kept as NaN in memory; imputation
is the feature pipeline's job.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .events import EVENT_NAMES

log = logging.getLogger(__name__)

MINING = "mining"
NON_MINING = "non-mining"
TASKS = (MINING, NON_MINING)


class DatasetError(Exception):
    """Fatal problem with a dataset or sample file."""


def expected_rows(rate_hz: float, duration_s: float) -> int:
    return int(round(rate_hz * duration_s))


@dataclass(frozen=True)
class RawSample:
    """One profiled window: a readings x events matrix of counter deltas.

    ``readings`` holds per-interval deltas (never cumulative counts), with
    NaN marking values the platform could not produce.  ``truncated`` is set
    when the target process vanished mid-recording; ``duration_s`` then
    reflects the achieved window so the row-count invariant still holds.
    """

    readings: np.ndarray
    timestamps_ms: np.ndarray
    rate_hz: float = 10.0
    duration_s: float = 30.0
    pid: int = 0
    machine_id: str = "unknown"
    program_id: str = "unknown"
    truncated: bool = False
    column_scales: np.ndarray | None = None
    event_names: tuple[str, ...] = EVENT_NAMES

    def __post_init__(self):
        readings = np.asarray(self.readings, dtype=np.float64)
        timestamps = np.asarray(self.timestamps_ms, dtype=np.int64)
        object.__setattr__(self, "readings", readings)
        object.__setattr__(self, "timestamps_ms", timestamps)
        if self.rate_hz <= 0 or self.duration_s <= 0:
            raise ValueError("rate_hz and duration_s must be positive")
        if readings.ndim != 2 or readings.shape[1] != len(self.event_names):
            raise ValueError(
                f"readings must be R x {len(self.event_names)}, got {readings.shape}"
            )
        want = expected_rows(self.rate_hz, self.duration_s)
        if readings.shape[0] != want:
            raise ValueError(
                f"row count mismatch: {readings.shape[0]} rows for "
                f"rate {self.rate_hz} Hz x {self.duration_s} s (expected {want})"
            )
        if timestamps.shape != (readings.shape[0],):
            raise ValueError("timestamps length must match reading rows")
        if readings.shape[0] and np.any(np.diff(timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        with np.errstate(invalid="ignore"):
            if np.any(readings < 0):
                raise ValueError("counter deltas must be non-negative")
        for ident in (self.machine_id, self.program_id):
            if not ident or any(c.isspace() for c in ident):
                raise ValueError(f"identifier {ident!r} must be non-empty, no whitespace")

    @property
    def n_rows(self) -> int:
        return self.readings.shape[0]

    def truncate(self, duration_s: float) -> "RawSample":
        """First ``duration_s`` seconds of this sample as a new sample."""
        rows = expected_rows(self.rate_hz, duration_s)
        if rows > self.n_rows:
            raise ValueError(
                f"cannot truncate to {duration_s} s: sample has only {self.n_rows} rows"
            )
        return RawSample(
            readings=self.readings[:rows].copy(),
            timestamps_ms=self.timestamps_ms[:rows].copy(),
            rate_hz=self.rate_hz,
            duration_s=duration_s,
            pid=self.pid,
            machine_id=self.machine_id,
            program_id=self.program_id,
            truncated=self.truncated,
            column_scales=self.column_scales,
            event_names=self.event_names,
        )


@dataclass(frozen=True)
class LabeledSample:
    sample_id: str
    sample: RawSample
    task: str
    subclass: str

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")


@dataclass
class Dataset:
    samples: list[LabeledSample]
    manifest: dict[str, str]
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        for subclass, task in self.manifest.items():
            if task not in TASKS:
                raise DatasetError(f"manifest maps {subclass!r} to unknown task {task!r}")
        rates = set()
        for ls in self.samples:
            if ls.subclass not in self.manifest:
                raise DatasetError(f"sample {ls.sample_id}: subclass {ls.subclass!r} not in manifest")
            if self.manifest[ls.subclass] != ls.task:
                raise DatasetError(
                    f"sample {ls.sample_id}: task {ls.task!r} contradicts manifest "
                    f"({ls.subclass!r} -> {self.manifest[ls.subclass]!r})"
                )
            rates.add(ls.sample.rate_hz)
        if len(rates) > 1:
            raise DatasetError(f"samples disagree on rate_hz: {sorted(rates)}")

    def __len__(self) -> int:
        return len(self.samples)

    def subclass_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for ls in self.samples:
            counts[ls.subclass] = counts.get(ls.subclass, 0) + 1
        return counts

    def filter(self, keep) -> "Dataset":
        return Dataset([ls for ls in self.samples if keep(ls)], dict(self.manifest))


def _format_value(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    return repr(float(x))  # shortest exact round-trip literal


def _metadata_line(sample: RawSample) -> str:
    parts = [
        f"# pid={sample.pid}",
        f"rate_hz={sample.rate_hz!r}",
        f"duration_s={sample.duration_s!r}",
        f"machine={sample.machine_id}",
        f"program={sample.program_id}",
    ]
    if sample.truncated:
        parts.append("truncated=1")
    if sample.column_scales is not None:
        parts.append("scales=" + ",".join(repr(float(s)) for s in sample.column_scales))
    return " ".join(parts)


def save_sample(sample: RawSample, path: Path | str) -> None:
    """Write one sample CSV; load_sample restores it bit for bit."""
    path = Path(path)
    lines = [_metadata_line(sample), "t_ms," + ",".join(sample.event_names)]
    for t, row in zip(sample.timestamps_ms, sample.readings):
        lines.append(str(int(t)) + "," + ",".join(_format_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _parse_metadata(line: str, path: Path) -> dict[str, str]:
    if not line.startswith("# "):
        raise DatasetError(f"{path}: missing metadata comment line")
    meta: dict[str, str] = {}
    for token in line[2:].split():
        if "=" not in token:
            raise DatasetError(f"{path}: malformed metadata token {token!r}")
        key, value = token.split("=", 1)
        meta[key] = value
    for required in ("pid", "rate_hz", "duration_s", "machine", "program"):
        if required not in meta:
            raise DatasetError(f"{path}: metadata missing {required!r}")
    return meta


def load_sample(path: Path | str) -> RawSample:
    path = Path(path)
    text = path.read_text()
    lines = text.splitlines()
    if len(lines) < 2:
        raise DatasetError(f"{path}: truncated file")
    meta = _parse_metadata(lines[0], path)
    header = lines[1].split(",")
    if header[0] != "t_ms":
        raise DatasetError(f"{path}: header must start with t_ms")
    event_names = tuple(header[1:])
    timestamps = []
    rows = []
    for ln, line in enumerate(lines[2:], start=3):
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != len(event_names) + 1:
            raise DatasetError(f"{path}:{ln}: expected {len(event_names) + 1} cells, got {len(cells)}")
        try:
            timestamps.append(int(cells[0]))
            rows.append([float(c) for c in cells[1:]])
        except ValueError as exc:
            raise DatasetError(f"{path}:{ln}: {exc}") from None
    scales = None
    if "scales" in meta:
        scales = np.array([float(s) for s in meta["scales"].split(",")])
    try:
        return RawSample(
            readings=np.array(rows, dtype=np.float64).reshape(len(rows), len(event_names)),
            timestamps_ms=np.array(timestamps, dtype=np.int64),
            rate_hz=float(meta["rate_hz"]),
            duration_s=float(meta["duration_s"]),
            pid=int(meta["pid"]),
            machine_id=meta["machine"],
            program_id=meta["program"],
            truncated=meta.get("truncated") == "1",
            column_scales=scales,
            event_names=event_names,
        )
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from None


def _cumulative_to_delta(sample: RawSample) -> RawSample:
    deltas = np.empty_like(sample.readings)
    deltas[0] = sample.readings[0]
    deltas[1:] = np.diff(sample.readings, axis=0)
    # counter resets show up as negative dips; clamp rather than reject
    with np.errstate(invalid="ignore"):
        deltas = np.where(deltas < 0, 0.0, deltas)
    return RawSample(
        readings=deltas,
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


def load_manifest(root: Path | str) -> dict[str, str]:
    manifest_path = Path(root) / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if not isinstance(manifest, dict):
        raise DatasetError(f"{manifest_path}: manifest must be a JSON object")
    return manifest


def load_dataset(root: Path | str, cumulative_to_delta: bool = False) -> Dataset:
    """Load every parseable sample under ``root``.

    Malformed sample files are skipped and recorded in ``Dataset.warnings``;
    a missing manifest or a duplicate sample id is fatal.
    """
    root = Path(root)
    manifest = load_manifest(root)
    samples: list[LabeledSample] = []
    warnings: list[str] = []
    seen_ids: set[str] = set()
    for path in sorted(root.glob("*/*/*.csv")):
        task, subclass = path.parent.parent.name, path.parent.name
        sample_id = path.stem
        if sample_id in seen_ids:
            raise DatasetError(f"duplicate sample id {sample_id!r} at {path}")
        seen_ids.add(sample_id)
        if subclass not in manifest:
            warnings.append(f"{path}: subclass {subclass!r} not in manifest")
            continue
        if manifest[subclass] != task:
            warnings.append(f"{path}: placed under {task!r} but manifest says {manifest[subclass]!r}")
            continue
        try:
            sample = load_sample(path)
        except DatasetError as exc:
            warnings.append(str(exc))
            continue
        if cumulative_to_delta:
            sample = _cumulative_to_delta(sample)
        samples.append(LabeledSample(sample_id, sample, task, subclass))
    for message in warnings:
        log.warning("%s", message)
    dataset = Dataset(samples, manifest, warnings)
    log.info(
        "loaded %d samples from %s (%d rejected): %s",
        len(samples), root, len(warnings), dataset.subclass_counts(),
    )
    return dataset


def save_dataset(dataset: Dataset, root: Path | str) -> None:
    """Write ``dataset`` in the standard on-disk layout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(dataset.manifest, indent=2, sort_keys=True) + "\n")
    for ls in dataset.samples:
        directory = root / ls.task / ls.subclass
        directory.mkdir(parents=True, exist_ok=True)
        save_sample(ls.sample, directory / f"{ls.sample_id}.csv")
