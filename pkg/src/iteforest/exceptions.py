"""Exception types raised across the package."""


class IteForestError(Exception):
    """Base class; ``code`` is a short machine-readable tag used by the CLI."""

    code = "error"


class ConfigurationError(IteForestError, ValueError):
    code = "config"


class SchemaError(IteForestError, ValueError):
    code = "schema"


class IngestionError(IteForestError, ValueError):
    code = "ingest"


class NoOOBTreesError(IteForestError, RuntimeError):
    """Raised when a training row is in-bag for every tree of a forest."""

    code = "no_oob"


class InferenceError(IteForestError, RuntimeError):
    code = "inference"
