"""Exception types shared across the package."""


class HetCDError(Exception):
    pass


class ConfigError(HetCDError, ValueError):
    """Invalid configuration value or unknown key."""


class ShapeError(HetCDError, ValueError):
    pass


class ValidationError(HetCDError, ValueError):
    """Input violates a documented precondition (non-binary mask, size mismatch, ...)."""


class DomainError(HetCDError, ValueError):
    pass


class TrainingError(HetCDError, RuntimeError):
    """Non-finite loss or gradient during optimisation."""


class NumericalError(HetCDError, ArithmeticError):
    pass
