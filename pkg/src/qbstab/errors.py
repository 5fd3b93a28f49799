"""Exception types shared across the package."""


class QBStabError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(QBStabError, ValueError):
    """Matrix or vector dimensions are inconsistent."""


class EquilibriumError(QBStabError, ValueError):
    """A point claimed to be an equilibrium is not, within tolerance."""


class NotPositiveDefiniteError(QBStabError, ValueError):
    """A matrix required to be symmetric positive definite is not."""


class SchemaError(QBStabError, ValueError):
    """A JSON document does not match the expected schema."""


class DataFileError(QBStabError, RuntimeError):
    """A bundled coefficient data file is missing or unreadable."""
