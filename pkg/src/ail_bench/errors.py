"""errors.py

Exception hierarchy shared by every ail-bench module.
"""
from typing import Any, Dict, Optional


class AilBenchError(Exception):
    """Base class for all ail-bench errors."""


class ConfigurationError(AilBenchError, ValueError):
    """Invalid configuration: unknown ids, out-of-range choices, bad flags."""


class DemoFormatError(AilBenchError, ValueError):
    """A demonstration file could not be parsed or does not match its env."""


class NumericError(AilBenchError, ArithmeticError):
    """Non-finite values surfaced during training.

    Attributes:
        diagnostics: Context captured when the error was raised (step index,
            last gradient norms per parameter, offending loss value, ...).
    """

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class RunError(AilBenchError, RuntimeError):
    """A run that had to succeed (e.g. expert training) did not."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
