"""Service availability forecasting: geo clustering, Gramian angular fields and the pipeline CLI."""

import json as _json

from . import _core
from ._core import (
    EARTH_RADIUS_KM,
    ArtifactTypeError,
    ConfigError,
    CorruptionError,
    DataError,
    Error,
    IoError,
    ShapeError,
    UnsupportedVersionError,
    ValidationError,
    decode_label,
    encode_gaf_pair,
    encode_label,
    gadf,
    gap_statistic,
    gasf,
    haversine,
    kmeans_haversine,
    paa,
    perturb_zero_series,
    rescale_to_unit,
    run_cli,
    scheduler_rate,
)

__version__ = "0.1.0"


def load_container(path):
    """Read a model container into a dict with the config parsed from JSON."""
    c = _core.load_container(str(path))
    c["config"] = _json.loads(c["config"])
    return c


__all__ = [
    "EARTH_RADIUS_KM",
    "ArtifactTypeError",
    "ConfigError",
    "CorruptionError",
    "DataError",
    "Error",
    "IoError",
    "ShapeError",
    "UnsupportedVersionError",
    "ValidationError",
    "decode_label",
    "encode_gaf_pair",
    "encode_label",
    "gadf",
    "gap_statistic",
    "gasf",
    "haversine",
    "kmeans_haversine",
    "load_container",
    "paa",
    "perturb_zero_series",
    "rescale_to_unit",
    "run_cli",
    "scheduler_rate",
]
