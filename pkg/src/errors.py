"""Exception hierarchy for the inversion pipeline."""


class LtiBayesError(Exception):
    """Base class for every error raised by the package."""


class DimensionError(LtiBayesError, ValueError):
    """Array length or shape disagrees with the declared dimensions."""


class LayoutError(LtiBayesError, ValueError):
    """A vector arrived in a storage layout the operation does not accept."""


class ConfigError(LtiBayesError, ValueError):
    """Invalid configuration value; the message names the offending field."""


class InstabilityError(LtiBayesError, RuntimeError):
    """Time stepping produced non-finite values."""


class CapacityError(LtiBayesError, MemoryError):
    """An operation would exceed its configured memory cap."""


class NumericalError(LtiBayesError, ArithmeticError):
    """A factorization or a numerical invariant failed."""


class StateError(LtiBayesError, RuntimeError):
    """An operation was called before the artifacts it depends on exist."""


class StaleArtifactError(LtiBayesError, RuntimeError):
    """Stored artifacts do not match the manifest or the current configuration."""


class ArchiveFormatError(LtiBayesError, ValueError):
    """A binary archive has a bad magic, header or payload length."""
