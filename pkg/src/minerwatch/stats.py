"""The twelve summary statistics computed per event series.

Order is fixed and shared with the feature-vector layout: the four
quantiles, the three sigma levels, skewness, excess kurtosis, the two
means, and variance.  Conventions for degenerate series:

* quantiles interpolate linearly between order statistics at p*(n-1)
* sigma_k is mean + k * population stddev, a location in series units
* variance is the population variance (divisor n)
* skewness is Fisher-Pearson g1 = m3 / m2^1.5, defined as 0 when m2 = 0
* kurtosis is excess g2 = m4 / m2^2 - 3, defined as 0 when m2 = 0
* geometric mean is the nth root of the product; 0 whenever a value is 0
  (series are non-negative counter deltas, so no sign handling)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STAT_NAMES = (
    "q20",
    "q40",
    "q60",
    "q80",
    "sigma1",
    "sigma2",
    "sigma3",
    "skewness",
    "kurtosis",
    "mean_arith",
    "mean_geom",
    "variance",
)
N_STATS = len(STAT_NAMES)
_QUANTILE_LEVELS = (0.2, 0.4, 0.6, 0.8)


@dataclass(frozen=True)
class StatisticKind:
    name: str
    index: int


STATISTICS: tuple[StatisticKind, ...] = tuple(
    StatisticKind(name, index) for index, name in enumerate(STAT_NAMES)
)


def column_statistics(matrix: np.ndarray) -> np.ndarray:
    """All twelve statistics for every column of ``matrix``.

    Returns an (n_columns, 12) array in the STAT_NAMES order.  Input must be
    NaN-free (run imputation first) and non-negative.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"need a non-empty 2-D matrix, got shape {x.shape}")
    if np.isnan(x).any():
        raise ValueError("matrix contains NaN; impute before extracting statistics")

    quantiles = np.quantile(x, _QUANTILE_LEVELS, axis=0)  # linear interpolation
    mean = x.mean(axis=0)
    centered = x - mean
    m2 = np.mean(centered**2, axis=0)
    m3 = np.mean(centered**3, axis=0)
    m4 = np.mean(centered**4, axis=0)
    std = np.sqrt(m2)
    nonzero = m2 > 0.0
    skewness = np.zeros_like(mean)
    kurtosis = np.zeros_like(mean)
    np.divide(m3, m2**1.5, out=skewness, where=nonzero)
    np.divide(m4, m2**2, out=kurtosis, where=nonzero)
    kurtosis[nonzero] -= 3.0

    geom = np.zeros_like(mean)
    positive = (x > 0.0).all(axis=0)
    if positive.any():
        geom[positive] = np.exp(np.log(x[:, positive]).mean(axis=0))

    out = np.empty((x.shape[1], N_STATS))
    out[:, 0:4] = quantiles.T
    out[:, 4] = mean + std
    out[:, 5] = mean + 2.0 * std
    out[:, 6] = mean + 3.0 * std
    out[:, 7] = skewness
    out[:, 8] = kurtosis
    out[:, 9] = mean
    out[:, 10] = geom
    out[:, 11] = m2
    return out


def series_statistics(series: np.ndarray) -> np.ndarray:
    """The twelve statistics of a single 1-D series."""
    return column_statistics(np.asarray(series, dtype=np.float64).reshape(-1, 1))[0]
