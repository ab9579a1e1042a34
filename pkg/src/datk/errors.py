class DatkError(Exception):
    """Base class for all library errors."""


class ConfigurationError(DatkError):
    """Bad shapes, unknown banks, invalid configuration values."""


class ContractError(DatkError):
    """A caller violated an operation's precondition."""


class NumericalError(DatkError):
    """Non-finite values or a failed numerical self-check."""


class FormatError(DatkError):
    """Malformed file (dataset, checkpoint, config)."""
