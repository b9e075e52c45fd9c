"""Exception hierarchy.

Everything raised for bad *data* (malformed files, inconsistent inputs,
impossible protocol requests) derives from CurationError so the CLI can map
it to a dedicated exit code, distinct from genuine internal bugs.
"""


class CurationError(Exception):
    """Base class for data-level failures."""


class FormatError(CurationError):
    """A file does not conform to its on-disk format."""


class ConsistencyError(CurationError):
    """Inputs are individually well-formed but mutually inconsistent."""


class IngestError(CurationError):
    """An embedding row cannot be accepted (e.g. zero vector)."""


class DimensionError(CurationError):
    """Embedding dimensionality mismatch."""


class GenerationError(CurationError):
    """Synthetic corpus generation cannot satisfy the requested spec."""


class ProtocolError(CurationError):
    """A pair protocol cannot be built from the given corpus."""


class InsufficientPairsError(CurationError):
    """Too few scores to certify the requested operating point."""


class FairnessError(CurationError):
    """Group metrics are undefined for the given inputs."""


class ProviderError(CurationError):
    """An embedding provider returned unusable output."""


class MatcherError(CurationError):
    """An external matcher crashed, timed out, or returned bad output."""


class ConfigError(CurationError):
    """A configuration file is invalid."""
