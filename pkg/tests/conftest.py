import numpy as np
import pytest

from minerwatch import synth
from minerwatch.events import EVENT_NAMES
from minerwatch.samples import RawSample


@pytest.fixture(scope="session")
def small_dataset():
    """2 tasks x 3 subclasses x 10 samples x 5 s, well separated."""
    return synth.generate(synth.preset_spec("small", divergence=1.0, seed=11))


@pytest.fixture()
def tiny_grid():
    return {
        "n_estimators": [10],
        "max_depth": [5],
        "max_features": ["sqrt"],
        "split_criterion": ["gini"],
        "bootstrap": [True],
        "random_state": [10],
    }


def make_sample(readings, rate_hz=10.0, duration_s=None, **kwargs):
    """RawSample around a readings matrix with generated timestamps."""
    readings = np.asarray(readings, dtype=np.float64)
    rows = readings.shape[0]
    if duration_s is None:
        duration_s = rows / rate_hz
    defaults = dict(
        rate_hz=rate_hz,
        duration_s=duration_s,
        pid=42,
        machine_id="testbox",
        program_id="prog",
        event_names=EVENT_NAMES[: readings.shape[1]],
    )
    defaults.update(kwargs)
    return RawSample(
        readings=readings,
        timestamps_ms=np.arange(1, rows + 1) * int(1000 / rate_hz),
        **defaults,
    )
