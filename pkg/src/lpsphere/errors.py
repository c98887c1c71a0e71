class LpsphereError(Exception):
    """Base class for all package errors."""


class DomainError(LpsphereError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DegenerateInputError(LpsphereError, ValueError):
    """Input is valid in type but degenerate (e.g. a zero vector to normalize)."""


class NoDirectionError(DegenerateInputError):
    """A zero gradient has no normalized direction."""


class NumericsError(LpsphereError, ArithmeticError):
    """A computed quantity fell outside its provable range."""


class ConfigError(LpsphereError, ValueError):
    """Invalid run configuration or network description."""


class DataFormatError(LpsphereError, ValueError):
    """Malformed dataset file."""


class TrainingDiverged(LpsphereError, RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
