"""Hot per-decision kernels.

The numba backend is used when numba imports cleanly, unless the
environment variable ``DUALBIKE_DISABLE_NUMBA`` is set to a truthy value,
in which case the pure-numpy backend is used. Both backends expose the
same functions and agree to floating-point round-off.
"""
import os

from . import _numpy

_disabled = os.environ.get("DUALBIKE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

if _disabled:
    _backend = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _numba as _backend
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba missing
        _backend = _numpy
        BACKEND = "numpy"

fill_level_counts = _backend.fill_level_counts
routing_distribution = _backend.routing_distribution
station_affinity = _backend.station_affinity
nearest_free_dock = _backend.nearest_free_dock
masked_argmax = _backend.masked_argmax
encode_state = _backend.encode_state

__all__ = [
    "BACKEND",
    "fill_level_counts",
    "routing_distribution",
    "station_affinity",
    "nearest_free_dock",
    "masked_argmax",
    "encode_state",
]
