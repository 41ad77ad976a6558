"""
Error types raised by the lab modules.

Every error derives from LabError so the CLI can render it as a structured
message; the numeric ones also derive from the closest built-in class.
"""


class LabError(Exception):
    """Base class for all errors raised by fnlab."""

    def details(self) -> dict:
        """Extra fields rendered next to the message on standard error."""
        return {}


class DomainError(LabError, ValueError):
    """A value is outside the domain of a formula (e.g. nonpositive wealth for CRRA)."""


class SizeMismatch(LabError, ValueError):
    """Two empirical measures have different atom counts."""


class NumericalBlowup(LabError, ArithmeticError):
    """Wealth left the guard bound; the scenario or step size is unstable."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step

    def details(self) -> dict:
        return {"step": self.step}


class InsufficientReplications(LabError):
    """Fewer samples than a conditional-mean estimate needs."""


class SingularEquilibrium(LabError, ArithmeticError):
    """The competition weight psi is too close to 1 for the equilibrium to exist."""

    def __init__(self, message: str, psi: float | None = None):
        super().__init__(message)
        self.psi = psi

    def details(self) -> dict:
        return {"psi": self.psi}


class NoConvergence(LabError, ArithmeticError):
    """The fixed-point iteration did not settle within max_iter."""


class Inconclusive(LabError):
    """Variant adjudication could not separate the candidates."""


class ParseError(LabError):
    """Malformed scenario configuration text."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        location = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{location}")
        self.line = line
        self.column = column

    def details(self) -> dict:
        return {"line": self.line, "column": self.column}


class ValidationError(LabError):
    """The configuration parsed but violates model constraints."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)

    def details(self) -> dict:
        return {"violations": self.violations}
