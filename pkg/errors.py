from __future__ import annotations

import numpy as np


class MetrpoError(Exception):
    """Base class for every error raised by the engine."""


class DimensionError(MetrpoError, ValueError):
    pass


class NonFiniteError(MetrpoError, FloatingPointError):
    pass


class DatasetError(MetrpoError):
    pass


class ConfigError(MetrpoError):
    pass


class ValidationError(MetrpoError):
    pass


class CheckpointError(MetrpoError):
    pass


def ensure_finite(values, what: str) -> None:
    array = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        raise NonFiniteError(f"{what}: {bad} non-finite value(s) of {np.size(array)}")
