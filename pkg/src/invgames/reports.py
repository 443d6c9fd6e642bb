"""Solver reports and exception types shared across the package."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class SolveReport:
    converged: bool = False
    iterations: int = 0
    residual_inf: float = float("inf")
    residual_two: float = float("inf")
    wall_time_s: float = 0.0
    num_variables: int = 0
    message: str = ""
    residual_history: list = field(default_factory=list)
    merit_history: list = field(default_factory=list)


class SolverError(Exception):
    """Base class for solver failures."""


class NonConvergenceError(SolverError):
    """Iteration or step-size limit hit; carries the best iterate found."""

    def __init__(self, message, best=None, report=None):
        super().__init__(message)
        self.best = best
        self.report = report


class SingularSystemError(SolverError):
    """A linear system could not be factorized even after regularization."""


class DegenerateParametersError(SolverError):
    """All basis weights landed on the floor; the estimate carries no
    direction information."""
