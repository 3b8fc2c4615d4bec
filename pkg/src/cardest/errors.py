"""Exception hierarchy shared across the package."""


class CardestError(Exception):
    """Base class for all package errors."""


class SchemaError(CardestError):
    """Schema file missing, malformed, or internally inconsistent."""


class IngestError(CardestError):
    """Table data does not match its declared schema."""


class QueryError(CardestError):
    """Query text cannot be parsed or resolved against the catalog."""


class StatsError(CardestError):
    """Statistics missing, incompatible, or corrupt on disk."""


class ModelError(CardestError):
    """Model configuration, training, or checkpoint failure."""
