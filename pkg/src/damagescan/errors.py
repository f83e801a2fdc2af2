"""Exception hierarchy shared across the engine.

Exit-code mapping for the CLI: ConfigError -> 2, DataError -> 3,
BackendError -> 4.
"""


class DamagescanError(Exception):
    """Base class for all engine errors."""


class ConfigError(DamagescanError):
    """Invalid or inconsistent run configuration."""


class DataError(DamagescanError):
    """Unreadable, malformed, or inconsistent input data."""


class BackendError(DamagescanError):
    """Failure while talking to an inference backend."""


class BackendTransportError(BackendError):
    """Connection / timeout failure. Retryable."""


class BackendProtocolError(BackendError):
    """Backend answered, but the response violates the wire contract."""
