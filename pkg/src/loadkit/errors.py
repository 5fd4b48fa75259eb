"""Exception hierarchy shared by every loadkit module."""

from __future__ import annotations


class LoadkitError(Exception):
    """Base class for all errors raised by loadkit."""


class MalformedCase(LoadkitError):
    """A MATPOWER case file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + where)


class SchemaError(LoadkitError):
    """A JSON document does not follow the expected schema."""


class InvariantViolation(LoadkitError):
    """Input is well formed but breaks a modeling invariant."""


class UnsupportedFeature(LoadkitError):
    """The case uses a feature the strict modeling policy refuses."""


class NonConvergence(LoadkitError):
    """Newton iteration failed; carries the last residual norm."""

    def __init__(self, message: str, residual_norm: float, iterations: int):
        self.residual_norm = residual_norm
        self.iterations = iterations
        super().__init__(f"{message} (residual {residual_norm:.3e} after {iterations} iterations)")


class DegenerateCircle(LoadkitError):
    """The power locus of a bus is a line rather than a circle."""


class Disjoint(LoadkitError):
    """Two power circles have no real intersection."""


class SolverFailure(LoadkitError):
    """An LP or QP solve ended without a certified answer."""


class SingularSystem(LoadkitError):
    """The boundary-point linear system is rank deficient."""

    def __init__(self, message: str, nullity: int):
        self.nullity = nullity
        super().__init__(f"{message} (null-space dimension {nullity})")


class NotPareto(LoadkitError):
    """A stationary point was found but it is not on the loadability boundary."""

    def __init__(self, message: str, point=None):
        self.point = point
        super().__init__(message)


class GridTooLarge(LoadkitError):
    """Requested oracle grid exceeds the evaluation guard."""


class SingularNetwork(LoadkitError):
    """The reduced admittance matrix cannot be inverted."""
