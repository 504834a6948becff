"""Exception hierarchy shared across the package."""


class ScenicastError(Exception):
    """Base class for all package errors."""


class ExclusionError(ScenicastError):
    """A frame or label that must not enter the pipeline was passed in."""


class RepositoryError(ScenicastError):
    """Corrupt or inconsistent on-disk repository state."""


class SchemaVersionError(RepositoryError):
    """Record batch does not match the repository's schema version."""


class ConfigError(ScenicastError):
    """Invalid configuration value or file."""


class TransportError(ScenicastError):
    """Weather source request failed.

    ``retryable`` tells the job runner whether re-queuing makes sense;
    ``backoff_s`` is the suggested wait before the next attempt.
    """

    def __init__(self, message: str, *, retryable: bool = True, backoff_s: float = 5.0):
        super().__init__(message)
        self.retryable = retryable
        self.backoff_s = backoff_s
