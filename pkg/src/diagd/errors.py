"""Exception hierarchy. CLI exit codes hang off ``exit_code``."""


class DiagDError(Exception):
    exit_code = 1


class ConfigError(DiagDError, ValueError):
    exit_code = 3


class BoundsError(DiagDError, IndexError):
    exit_code = 3


class ResourceError(DiagDError, MemoryError):
    exit_code = 4


class UnsupportedBackendError(DiagDError, TypeError):
    exit_code = 3


class InvariantError(DiagDError, AssertionError):
    """An internal invariant was violated; indicates a bug, not bad input."""

    exit_code = 70
