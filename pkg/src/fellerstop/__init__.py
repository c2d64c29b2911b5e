"""Discounted optimal stopping for Feller processes by penalized resolvent iteration."""

from .core import (
    BoundaryKind,
    FellerStopError,
    Grid1D,
    InvalidInput,
    SampledFunction,
    SolverError,
    StateSpace,
    StoppingProblem,
    make_uniform_grid,
    straddle_payoff,
    sup_norm,
    sup_norm_diff,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryKind",
    "FellerStopError",
    "Grid1D",
    "InvalidInput",
    "SampledFunction",
    "SolverError",
    "StateSpace",
    "StoppingProblem",
    "make_uniform_grid",
    "straddle_payoff",
    "sup_norm",
    "sup_norm_diff",
]
