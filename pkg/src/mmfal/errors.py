"""Shared exception types."""


class MmfalError(Exception):
    """Base class for all package-specific failures."""


class ConfigurationError(MmfalError):
    """A model or experiment configuration is internally inconsistent."""


class ManifestError(MmfalError):
    """A manifest file violates the record schema."""


class PreprocessError(MmfalError):
    """An image could not be decoded or preprocessed."""


class RoiBoundsError(PreprocessError):
    """An ROI box does not fit inside its source image."""


class PoolExhausted(MmfalError):
    """Raised when a query strategy is asked to select from an empty pool."""


class UndefinedMetricError(MmfalError):
    """A metric is undefined for the given inputs (empty set, degenerate class)."""


class OracleTimeout(MmfalError):
    """A live labeling oracle did not answer in time; pool state is unchanged."""
