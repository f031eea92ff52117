"""Blind source separation of trajectories through locally defined scalar invariants.

Stages, in pipeline order:

- ``trajectory``: series I/O, velocities and neighborhood cells
- ``moments``: local central velocity moments
- ``frames``: whitening and fourth-order diagonalizing frames, aligned across cells
- ``invariants``: frame-transformed moments and the per-group multiplets
- ``manifold``: dimension tests, charts and the source map
- ``separability``: factorization test, partition search and linearity test
- ``generators`` and ``audiofeatures``: synthetic scenes, toy systems and mel features
"""
__version__ = "0.1.0"

from .errors import BSSError  # noqa: E402
from .pipeline import Analysis, CellConfig, analyze_series, match_sources  # noqa: E402
from .separability import SearchConfig  # noqa: E402
from .trajectory import TimeSeries, load_series, save_series  # noqa: E402

__all__ = ["Analysis", "BSSError", "CellConfig", "SearchConfig", "TimeSeries", "analyze_series",
           "load_series", "match_sources", "save_series", "__version__"]
