"""
Exception hierarchy for the magnetostatics solver.

Every module raises one of these so that the tool handlers and the bench CLI
can report failures per request / per study cell instead of crashing.
"""

from typing import Any


class MagnetostaticsError(Exception):
    """Base class for all solver errors"""


class ConfigurationError(MagnetostaticsError, ValueError):
    """Invalid geometry, missing materials or a malformed config file"""

    def __init__(self, violations: list[str] | str):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UsageError(MagnetostaticsError, ValueError):
    """Out-of-range indices and dimension mismatches"""


class DataError(MagnetostaticsError, ValueError):
    """Unusable material data (non-monotone or negative B-H samples)"""


class CertificationError(MagnetostaticsError):
    """Bounds or certificate constants violate their invariants"""


class UnsupportedMethodError(MagnetostaticsError):
    """The requested iteration is not defined for the given material law"""


class NumericalError(MagnetostaticsError, ArithmeticError):
    """Breakdown of a numerical procedure"""


class SolverError(NumericalError):
    """The linear solve of the update problem did not converge"""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


class ExportError(MagnetostaticsError, OSError):
    """Writing an output file failed"""
