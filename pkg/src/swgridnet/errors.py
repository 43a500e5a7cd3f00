"""Exception hierarchy shared by every module.

Each class carries a short ``kind`` tag; the CLI prints it as the first field
of its one-line error message.
"""


class SwGridError(Exception):
    kind = "error"


class ConfigurationError(SwGridError, ValueError):
    kind = "config"


class InvalidInputError(SwGridError, ValueError):
    kind = "invalid-input"


class UsageError(SwGridError, RuntimeError):
    kind = "usage"


class ResourceError(SwGridError, RuntimeError):
    kind = "resource"


class DataInputError(SwGridError, OSError):
    """Missing or truncated data file. ``offset`` is the byte position reached."""

    kind = "input"

    def __init__(self, message, path=None, offset=None):
        super().__init__(message)
        self.path = path
        self.offset = offset


class CorruptDataError(SwGridError, ValueError):
    kind = "corrupt-data"


class CheckpointError(SwGridError, ValueError):
    kind = "checkpoint"


class DivergenceError(SwGridError, FloatingPointError):
    kind = "divergence"
