"""Exception hierarchy shared across the pipeline.

Exit-code mapping used by the CLI: ConfigError -> 2, DataError -> 3,
ArtifactMismatchError -> 4. Everything else is a bug.
"""


class MalforestError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MalforestError):
    """Bad or missing configuration: out-of-range hyperparameter, missing
    parent artifact, malformed config file."""


class DataError(MalforestError):
    """Bad data: dimension mismatch, single-class labels, empty store."""


class DimensionMismatchError(DataError):
    """Input dimensionality does not match the fitted artifact."""


class ArtifactMismatchError(MalforestError):
    """Artifact fingerprints do not chain: e.g. a reducer fit against a
    different scaler than the one supplied at evaluation time."""


class StoreFormatError(DataError):
    """Base class for dataset container format errors."""


class BadMagicError(StoreFormatError):
    pass


class VersionError(StoreFormatError):
    pass


class TruncatedError(StoreFormatError):
    pass


class ChecksumError(StoreFormatError):
    pass


class ManifestError(MalforestError):
    """Pipeline manifest is unreadable or inconsistent."""
