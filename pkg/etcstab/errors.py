"""
errors.py - Exception Hierarchy and Exit Codes

Every failure the toolkit can report derives from `EtcStabError`. Each class
carries the process exit code the command-line surface returns for it, so the
CLI can translate any exception into a stable contract without a lookup table:

    0 success, 1 validation failure, 2 divergence, 3 solver failure
"""
from typing import Any, Optional


class EtcStabError(Exception):
    """Base class for all toolkit errors."""
    exit_code: int = 1


class ValidationError(EtcStabError):
    """
    A scenario file or in-memory input violates a documented constraint.

    Args:
        message: Human-readable description.
        line: 1-based line in the scenario file the problem was traced to.
    """
    exit_code = 1

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParameterError(ValidationError):
    """A trigger or design parameter falls outside its admissible range."""


class GraphError(ValidationError):
    """The network structure does not satisfy a precondition."""


class DivergenceError(EtcStabError):
    """
    The divergence guard stopped a simulation.

    The partial trajectory up to the guard time is attached so callers can
    still export and analyse it.
    """
    exit_code = 2

    def __init__(self, message: str, trajectory: Any = None):
        super().__init__(message)
        self.trajectory = trajectory


class SolverError(EtcStabError):
    """A numerical procedure failed."""
    exit_code = 3


class StabilizabilityError(SolverError):
    """(A, B) has an uncontrollable mode with nonnegative real part."""


class ConvergenceError(SolverError):
    """An iterative method ran out of iterations."""


class CertificateError(SolverError):
    """A stability certificate could not be established."""


class SingularMatrixError(SolverError):
    """A matrix that must be inverted is numerically singular."""


class PositivityError(SolverError):
    """A dynamic trigger variable left the positive half-line."""
