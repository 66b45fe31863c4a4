"""Exception types raised by fedod."""


class FedODError(Exception):
    """Base class for all package errors."""


class ContractViolation(FedODError, ValueError):
    """An operation was called with arguments that break its preconditions."""


class DataFormatError(FedODError, ValueError):
    """Input data could not be parsed or does not match its schema."""


class ConfigError(FedODError, ValueError):
    """An experiment configuration is invalid."""
