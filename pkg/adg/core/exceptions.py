"""
Exception hierarchy shared by every ADG module

Each error carries the exit code the command line reports for it.
"""
from typing import Any, Optional


class AdgError(Exception):
    """Base class for all framework errors"""

    exit_code: int = 1


class ContractViolation(AdgError, ValueError):
    """A precondition, dimension or invariant check failed"""


class ProtocolViolation(AdgError):
    """Malformed exchange between the master and its workers"""


class UnsupportedDiagnosticError(AdgError):
    """A proof diagnostic was requested for a problem without a known minimizer"""


class ConfigError(AdgError):
    """Invalid experiment configuration"""

    exit_code = 2


class DivergedError(AdgError):
    """An iterate became non-finite

    Carries the last finite iterate and the step (or epoch) at which the
    failure was detected; run loops attach their CommStats and RunTrace
    before re-raising.
    """

    exit_code = 3

    def __init__(self, message: str, iterate: Any = None, step: Optional[int] = None,
                 stats: Any = None, trace: Any = None):
        super().__init__(message)
        self.iterate = iterate
        self.step = step
        self.stats = stats
        self.trace = trace


class DataError(AdgError):
    """Dataset could not be loaded or partitioned"""

    exit_code = 4


class ParseError(DataError):
    """Malformed input record"""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateRatingError(ParseError):
    """The same (user, item) pair was rated twice"""


class InfeasiblePartitionError(DataError):
    """The data cannot be split across the requested number of machines"""
