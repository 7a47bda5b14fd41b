"""Numerical laboratory for higher-order geometric flows on flat tori."""

from .errors import (DegenerateMetricError, DiffeomorphismError, GridMismatchError, HoflowError,
                     InconclusiveSymbolError, NonFiniteError, UsageError)
from .grid import Grid, MetricField, TensorField, interpolate, read_snapshot, write_snapshot
from .flows import FlowSpec
from .evolve import PicardConfig, Trajectory, imex_evolve, picard_solve, deturck_pullback

__all__ = [
    "DegenerateMetricError", "DiffeomorphismError", "GridMismatchError", "HoflowError",
    "InconclusiveSymbolError", "NonFiniteError", "UsageError",
    "Grid", "MetricField", "TensorField", "interpolate", "read_snapshot", "write_snapshot",
    "FlowSpec", "PicardConfig", "Trajectory", "imex_evolve", "picard_solve", "deturck_pullback",
]
__version__ = "0.1.0"
