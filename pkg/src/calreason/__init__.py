"""Calibration then GRPO reasoning for explainable quality assessment on a synthetic task."""
from ._backend import BACKEND, HAS_NUMBA

__version__ = "0.1.0"

__all__ = ["BACKEND", "HAS_NUMBA", "__version__"]
