"""Exception hierarchy shared across the package."""


class GraphMendError(Exception):
    """Base class for all package errors."""


class GraphFormatError(GraphMendError):
    """A graph file line could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IntegrityError(GraphMendError):
    """Referential or schema integrity of a graph index is violated."""


class CitationError(GraphMendError):
    """A triple was offered for insertion without usable provenance."""


class EmbeddingError(GraphMendError):
    """An embedding provider failed to produce a vector."""


class EmptyDistributionError(GraphMendError):
    """A node has no entity neighbors to walk to."""


class NotCorruptible(GraphMendError):
    """A corruption operator cannot be applied without breaking its floor."""


class EmptyEpochError(GraphMendError):
    """No training views could be produced for an epoch."""


class TrainingError(GraphMendError):
    """Training diverged (non-finite loss)."""


class CheckpointError(GraphMendError):
    """A checkpoint is unreadable or does not match the expected config."""


class BackendError(GraphMendError):
    """A completion backend failed after exhausting its retries."""


class ConfigError(GraphMendError):
    """Pipeline configuration is invalid."""
