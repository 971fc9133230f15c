"""Exception hierarchy shared across the harness."""


class RecauditError(Exception):
    """Base class for all harness errors."""


class IngestError(RecauditError):
    """Raw input could not be read or violates the column mapping."""


class PreprocessError(RecauditError):
    """A preprocessing step produced an unusable dataset."""


class SplitError(RecauditError):
    """A split request is invalid or produced an empty side."""


class ModelError(RecauditError):
    """A recommender could not be fitted or scored."""


class EvaluationError(RecauditError):
    """Evaluation could not be carried out as configured."""


class DiagnosticsError(RecauditError):
    """A diagnostic statistic is undefined for the given data."""


class EmbeddingError(RecauditError):
    """Item embeddings are missing, malformed, or inconsistent."""


class ConfigError(RecauditError):
    """A run configuration is invalid."""
