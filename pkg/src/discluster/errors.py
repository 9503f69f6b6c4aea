"""Exception hierarchy shared across the package."""


class DisclusterError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DisclusterError, ValueError):
    pass


class DomainError(DisclusterError, ValueError):
    pass


class ContractError(DisclusterError, ValueError):
    pass


class ParameterError(DisclusterError, ValueError):
    pass


class StateError(DisclusterError, RuntimeError):
    pass


class ConfigError(DisclusterError, ValueError):
    pass


class ParseError(DisclusterError, ValueError):
    pass


class UnsupportedConfigurationError(DisclusterError, ValueError):
    pass


class NonFiniteError(DisclusterError, ArithmeticError):
    pass
