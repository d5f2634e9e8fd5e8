"""
Exception hierarchy for the LMS2S system.

Every error raised on purpose by the package derives from LmsError so the
CLI can turn it into a one-line report and a nonzero exit status.
"""

from typing import Optional


class LmsError(Exception):
    """Root of all package errors."""


class ShapeError(LmsError, ValueError):
    pass


class ContractError(LmsError, ValueError):
    pass


class PhaseOrderError(ContractError):
    pass


class TargetIndexError(LmsError, IndexError):
    pass


class NonFiniteError(LmsError, FloatingPointError):
    pass


class SingleClusterError(LmsError):
    pass


class DivergenceError(LmsError, RuntimeError):
    pass


class CheckpointError(LmsError):
    pass


class ConfigError(LmsError, ValueError):

    def __init__(self, key: str, constraint: str):
        self.key = key
        self.constraint = constraint
        super().__init__(f"config key '{key}': {constraint}")


class CorpusFormatError(LmsError, ValueError):

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
