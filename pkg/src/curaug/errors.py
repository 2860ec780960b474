"""Exception hierarchy, one class per CLI exit code."""

from __future__ import annotations


class ConfigError(ValueError):
    """Bad option, flag, or config-file value. CLI exit code 2."""


class DataError(ValueError):
    """Malformed or inconsistent input data. CLI exit code 3."""


class NumericError(ArithmeticError):
    """Numerical failure (non-finite values, factorization). CLI exit code 4."""
