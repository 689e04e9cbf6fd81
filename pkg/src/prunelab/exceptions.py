"""Error taxonomy shared across the toolkit."""


class PrunelabError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(PrunelabError):
    """Operand shapes do not conform for the requested operation."""


class NumericError(PrunelabError):
    """An operation produced a non-finite value."""


class ContractError(PrunelabError):
    """An API precondition was violated by the caller."""


class InputError(PrunelabError):
    """User-supplied data is malformed or out of range."""


class ConfigError(PrunelabError):
    """A run configuration is invalid."""


class RunError(PrunelabError):
    """A training, evaluation or benchmark run failed at runtime."""
