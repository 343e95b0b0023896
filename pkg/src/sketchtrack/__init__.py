"""Sketched least-squares solvers with statistical tracking and stopping."""

from .errors import (
    ConfigError,
    IOFailure,
    MalformedHeaderError,
    MatrixDimensionError,
    MatrixNotFoundError,
    NumericalError,
    SketchTrackError,
)
from .fourdvar import FourDVarProblem, assimilate, make_problem
from .linalg_core import WlsProblem
from .rowstream import GentlemanState
from .sketch import SketchSpec, draw_sketch, min_embedding_dim
from .solver import solve
from .tracker import TrackerConfig

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "IOFailure", "MalformedHeaderError", "MatrixDimensionError", "MatrixNotFoundError",
    "NumericalError", "SketchTrackError", "FourDVarProblem", "assimilate", "make_problem", "WlsProblem",
    "GentlemanState", "SketchSpec", "draw_sketch", "min_embedding_dim", "solve", "TrackerConfig",
]
