"""Input checking and coercion helpers shared by the estimator and the CLI."""
from __future__ import annotations

import numpy as np

from rise.core import INSTANCE_KINDS, MaskedSeries
from rise.encoders import ENCODER_KINDS


def as_masked_series(obj, series_id: str = "0") -> MaskedSeries:
    """Accept a :class:`MaskedSeries` or a 1-D array with NaN marking missing values."""
    if isinstance(obj, MaskedSeries):
        return obj
    x = np.asarray(obj, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D series, got shape {x.shape}")
    m = ~np.isnan(x)
    return MaskedSeries(np.arange(x.size, dtype=np.float64), np.where(m, x, np.nan), m.astype(np.int8), series_id)


def check_series(X) -> list[MaskedSeries]:
    """Normalize ``X`` (series, array, list of either, or a corpus) to a list of series."""
    from rise.data import Corpus

    if isinstance(X, Corpus):
        return list(X.series)
    if isinstance(X, MaskedSeries):
        return [X]
    if isinstance(X, np.ndarray) and X.ndim == 1:
        return [as_masked_series(X)]
    if isinstance(X, np.ndarray) and X.ndim == 2:
        return [as_masked_series(row, str(k)) for k, row in enumerate(X)]
    out = [as_masked_series(item, str(k)) for k, item in enumerate(X)]
    if not out:
        raise ValueError("no series given")
    return out


def check_instance(name: str) -> str:
    if name not in INSTANCE_KINDS:
        raise ValueError(f"unknown instance {name!r}; choose from {', '.join(INSTANCE_KINDS)}")
    return name


def check_encoder(name: str) -> str:
    if name not in ENCODER_KINDS:
        raise ValueError(f"unknown encoder {name!r}; choose from {', '.join(ENCODER_KINDS)}")
    return name
