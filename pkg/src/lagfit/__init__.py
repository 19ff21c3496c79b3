"""Periodic 3D Laguerre tessellations with hierarchical point and radii models."""

__version__ = "0.1.0"

from .errors import LagfitError  # noqa: E402
from .pattern import MarkedPointPattern, Window, read_pattern_csv, write_pattern_csv  # noqa: E402
from .tessellation import PeriodicTessellation, build_tessellation, update_generator  # noqa: E402

__all__ = [
    "LagfitError",
    "MarkedPointPattern",
    "PeriodicTessellation",
    "Window",
    "build_tessellation",
    "read_pattern_csv",
    "update_generator",
    "write_pattern_csv",
    "__version__",
]
