"""Exception hierarchy shared by every congrad module."""


class CongradError(Exception):
    """Base class for all errors raised by congrad."""


class InvalidInputError(CongradError, ValueError):
    """Malformed arguments: wrong shapes, lengths, empty inputs."""


class InvalidRankError(InvalidInputError):
    """Requested factorization rank is outside ``[1, min(rows, cols)]``."""


class NonFiniteGradientError(InvalidInputError):
    """A gradient contained NaN or Inf entries."""


class EmptyStoreError(CongradError):
    """Snapshot requested from a gradient store that was never updated."""


class EmptyDataError(CongradError):
    """Every language ended up with no usable preference pairs."""


class ConfigError(InvalidInputError):
    """Configuration failed validation; ``field`` names the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ReportParseError(InvalidInputError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno
