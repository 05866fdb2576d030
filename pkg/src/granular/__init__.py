"""Kinetic simulation and numerical verification tools for viscoelastic granular gases."""

from granular.errors import DomainError, InvariantViolation, NumericError, ValidationError

__version__ = "0.1.0"

__all__ = ["DomainError", "InvariantViolation", "NumericError", "ValidationError", "__version__"]
