"""Per-process counter profiling and random-forest detection of covert mining."""

from .events import EVENT_NAMES, EVENTS, N_EVENTS, EventKind
from .features import FeatureMask, FeatureVector, ScalerParams
from .learn import Metrics, RFParams, SVMParams
from .samples import Dataset, DatasetError, LabeledSample, RawSample

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DatasetError",
    "EventKind",
    "EVENTS",
    "EVENT_NAMES",
    "FeatureMask",
    "FeatureVector",
    "LabeledSample",
    "Metrics",
    "N_EVENTS",
    "RawSample",
    "RFParams",
    "SVMParams",
    "ScalerParams",
    "__version__",
]
