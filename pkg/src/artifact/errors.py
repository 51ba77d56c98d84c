"""Exception types shared across the package.

The CLI maps :class:`ConfigError` to exit code 2 and :class:`NumericError`
to exit code 3.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid parameters, laws, grids or configuration files."""


class DomainError(ValueError):
    """An argument lies outside the domain where a function is defined."""


class NumericError(RuntimeError):
    """A numerical procedure failed (NaN, overflow, non-convergence)."""

    def __init__(self, message: str, where: dict | None = None):
        super().__init__(message)
        self.where = dict(where or {})


class CFLError(ConfigError):
    """The requested explicit time step violates the stability bound."""

    def __init__(self, message: str, required_ds: float):
        super().__init__(message)
        self.required_ds = required_ds
