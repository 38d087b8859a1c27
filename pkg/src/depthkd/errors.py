"""Exception types shared across the package.

CLI exit codes are attached to the classes so the command layer can map any
raised error to the documented status without a lookup table.
"""


class DepthKDError(Exception):
    exit_code = 1


class ShapeError(DepthKDError, ValueError):
    exit_code = 2


class ParameterError(DepthKDError, ValueError):
    exit_code = 2


class DomainError(DepthKDError, ValueError):
    exit_code = 3


class ConfigError(DepthKDError, ValueError):
    exit_code = 2


class DivergenceError(DepthKDError, RuntimeError):
    exit_code = 3


class GradcheckError(DepthKDError, RuntimeError):
    exit_code = 3


class FormatError(DepthKDError, IOError):
    exit_code = 4


class FingerprintError(FormatError):
    exit_code = 4


class ProtocolError(DepthKDError, RuntimeError):
    """Raised when the per-iteration training protocol is violated."""

    exit_code = 1
