"""Exception hierarchy shared across the package."""


class LatkdError(Exception):
    """Base class for all package errors."""


class DataError(LatkdError):
    """Raised for ingestion or preprocessing failures (bad files, bad cells)."""


class SchemaError(LatkdError):
    """Raised when a feature schema cannot be fitted or applied."""


class TrainingError(LatkdError):
    """Raised when a training run cannot proceed or diverges."""


class RegistryGapError(LatkdError):
    """Raised when a requested teacher frame is missing from the registry."""


class IntegrityError(LatkdError):
    """Raised when stored bytes fail their content-hash check."""


class ConcurrencyError(LatkdError):
    """Raised when a run directory is already locked by another writer."""


class ConfigError(LatkdError):
    """Raised for invalid harness configuration."""
