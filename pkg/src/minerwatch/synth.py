"""Synthetic labeled trace generator.

Each class gets a stationary per-event signature: an AR(1) series per
event, x_t = rho * x_{t-1} + (1 - rho) * mu + eps_t with mean-centered
log-normal innovations, clipped at zero.  Class profiles share a common
base and diverge by a location offset scaled with ``divergence``, so
divergence 0 produces indistinguishable classes and larger values make
the classification progressively easier.  Per-program jitter perturbs a
profile slightly, emulating different miner builds of the same core
algorithm for the unseen-program experiment.

This is plumbing for exercising the pipeline at desk scale, not a model
of real microarchitectural behavior.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import EVENT_NAMES, N_EVENTS
from .samples import MINING, NON_MINING, Dataset, LabeledSample, RawSample, expected_rows

MINING_SUBCLASSES = (
    "bcd", "btc", "btm", "dash", "dcr", "eth", "ltc", "qrk", "xmr", "xzc", "zec",
)
USER_SUBCLASSES = (
    "render3d", "archive7z", "h264encode", "mqueens", "namd", "netflix",
    "rftrain", "skype", "stressng", "tf2game", "vmd",
)

_LOC_LOW, _LOC_HIGH = 2.0, 9.0     # log-space band for base event locations
_SPREAD_LOW, _SPREAD_HIGH = 0.2, 0.6
_TASK_SCALE = 0.5                   # log-space offset scale between tasks
_CLASS_SCALE = 0.35                 # log-space offset scale between subclasses


@dataclass(frozen=True)
class ClassProfile:
    """Stationary signature of one subclass."""

    location: np.ndarray      # log-space means, one per event
    spread: np.ndarray        # log-space stddevs, one per event
    autocorrelation: float = 0.3
    program_jitter: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "location", np.asarray(self.location, dtype=np.float64))
        object.__setattr__(self, "spread", np.asarray(self.spread, dtype=np.float64))
        if np.any(self.spread <= 0):
            raise ValueError("spreads must be positive")
        if not 0.0 <= self.autocorrelation < 1.0:
            raise ValueError("autocorrelation must be in [0, 1)")
        if self.program_jitter < 0:
            raise ValueError("program_jitter must be >= 0")


@dataclass
class SynthSpec:
    classes: list[tuple[str, str, ClassProfile]]  # (task, subclass, profile)
    samples_per_subclass: int = 50
    rate_hz: float = 10.0
    duration_s: float = 30.0
    seed: int = 0
    programs: dict[str, tuple[str, ...]] = field(default_factory=dict)  # subclass -> programs

    def __post_init__(self):
        names = [subclass for _, subclass, _ in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("subclass names must be unique")


def make_profiles(
    n_mining: int,
    n_nonmining: int,
    divergence: float,
    seed: int,
    autocorrelation: float = 0.3,
    program_jitter: float | None = None,
) -> list[ClassProfile]:
    """Profiles for n_mining + n_nonmining classes, separation scaled by divergence.

    With divergence 0 every profile is identical.  Program jitter defaults to
    a tenth of the divergence.
    """
    if n_mining < 1 or n_nonmining < 1:
        raise ValueError("need at least one class per task")
    if divergence < 0:
        raise ValueError("divergence must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    base_location = rng.uniform(_LOC_LOW, _LOC_HIGH, size=N_EVENTS)
    base_spread = rng.uniform(_SPREAD_LOW, _SPREAD_HIGH, size=N_EVENTS)
    task_offsets = rng.normal(0.0, _TASK_SCALE, size=(2, N_EVENTS))
    jitter = 0.1 * divergence if program_jitter is None else program_jitter

    profiles = []
    for task_index, count in ((0, n_mining), (1, n_nonmining)):
        for _ in range(count):
            class_offset = rng.normal(0.0, _CLASS_SCALE, size=N_EVENTS)
            location = base_location + divergence * (task_offsets[task_index] + class_offset)
            profiles.append(ClassProfile(
                location=location,
                spread=base_spread,
                autocorrelation=autocorrelation,
                program_jitter=jitter,
            ))
    return profiles


def _sample_matrix(profile: ClassProfile, location: np.ndarray, rows: int,
                   rng: np.random.Generator) -> np.ndarray:
    """One AR(1) readings matrix (rows x events) for a concrete location."""
    rho = profile.autocorrelation
    mu = np.exp(location + 0.5 * profile.spread**2)  # linear-space stationary mean
    innovations = rng.lognormal(mean=location, sigma=profile.spread,
                                size=(rows, location.size)) - mu
    out = np.empty((rows, location.size))
    previous = mu
    for t in range(rows):
        previous = rho * previous + (1.0 - rho) * mu + innovations[t]
        np.maximum(previous, 0.0, out=previous)
        out[t] = previous
    return out


def generate(spec: SynthSpec) -> Dataset:
    """Deterministic dataset in the standard layout for a synthetic spec."""
    rows = expected_rows(spec.rate_hz, spec.duration_s)
    interval_ms = 1000.0 / spec.rate_hz
    timestamps = (np.arange(1, rows + 1) * interval_ms).astype(np.int64)
    samples: list[LabeledSample] = []
    manifest: dict[str, str] = {}
    for class_index, (task, subclass, profile) in enumerate(spec.classes):
        manifest[subclass] = task
        programs = spec.programs.get(subclass, ("p0",))
        for program_index, program in enumerate(programs):
            if program_index == 0:
                location = profile.location  # first program is the unperturbed base
            else:
                jitter_rng = np.random.default_rng(
                    np.random.SeedSequence((spec.seed, class_index, program_index, 0xA11))
                )
                location = profile.location + profile.program_jitter * jitter_rng.normal(
                    0.0, 1.0, size=profile.location.size
                )
            for i in range(spec.samples_per_subclass):
                rng = np.random.default_rng(
                    np.random.SeedSequence((spec.seed, class_index, program_index, i))
                )
                sample = RawSample(
                    readings=_sample_matrix(profile, location, rows, rng),
                    timestamps_ms=timestamps,
                    rate_hz=spec.rate_hz,
                    duration_s=spec.duration_s,
                    pid=0,
                    machine_id="synth",
                    program_id=program,
                    event_names=EVENT_NAMES,
                )
                suffix = f"-{program}" if len(programs) > 1 else ""
                samples.append(LabeledSample(
                    sample_id=f"{subclass}{suffix}-{i:03d}",
                    sample=sample,
                    task=task,
                    subclass=subclass,
                ))
    return Dataset(samples, manifest)


def preset_spec(
    preset: str,
    divergence: float = 1.0,
    seed: int = 0,
    programs_for: str | None = None,
    n_programs: int = 1,
) -> SynthSpec:
    """The two stock configurations: ``paper`` (2 x 11 x 50 x 30 s) and
    ``small`` (2 x 3 x 10 x 5 s, for quick checks)."""
    if preset == "paper":
        mining, user = MINING_SUBCLASSES, USER_SUBCLASSES
        per, duration = 50, 30.0
    elif preset == "small":
        mining, user = MINING_SUBCLASSES[:3], USER_SUBCLASSES[:3]
        per, duration = 10, 5.0
    else:
        raise ValueError(f"unknown preset {preset!r}")
    profiles = make_profiles(len(mining), len(user), divergence, seed)
    classes = [(MINING, name, profiles[i]) for i, name in enumerate(mining)]
    classes += [(NON_MINING, name, profiles[len(mining) + i]) for i, name in enumerate(user)]
    programs = {}
    if programs_for is not None and n_programs > 1:
        programs[programs_for] = tuple(f"p{i}" for i in range(n_programs))
    return SynthSpec(
        classes=classes,
        samples_per_subclass=per,
        rate_hz=10.0,
        duration_s=duration,
        seed=seed,
        programs=programs,
    )
