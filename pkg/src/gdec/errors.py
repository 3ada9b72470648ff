"""Exception hierarchy shared across the engine.

The CLI maps these onto its exit codes: ProtocolError -> 2, DataError -> 3,
DegenerateInputError -> 4, anything else -> 1.
"""


class GdecError(Exception):
    """Base class for all engine errors."""


class ConfigError(GdecError, ValueError):
    """A configuration value is out of range or a config file is malformed."""


class DomainError(GdecError, ValueError):
    """A numeric argument violates a function's precondition."""


class DataError(GdecError, ValueError):
    """Input data is inconsistent (missing annotation, key mismatch, bad file)."""


class InsufficientDataError(DataError):
    """Too few points to run an estimator."""


class DegenerateInputError(GdecError, ValueError):
    """Input is technically well-formed but carries no usable signal."""


class FrameError(GdecError, ValueError):
    """A log-probability vector violates the frame contract."""


class ProtocolError(GdecError, RuntimeError):
    """The bridge wire protocol was violated (handshake, framing, transport)."""


class ContractViolationError(ProtocolError):
    """A bridge response broke a numeric contract (names the offending request)."""


class DecodeError(GdecError, RuntimeError):
    """A session failed mid-generation; carries the partial trace."""

    def __init__(self, message, partial_trace=None):
        super().__init__(message)
        self.partial_trace = partial_trace
