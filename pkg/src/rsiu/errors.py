"""Exception hierarchy shared across the package."""


class RsiuError(Exception):
    """Base class for all package errors."""


class ShapeError(RsiuError, ValueError):
    """Inputs have mismatched lengths or dimensions."""


class DomainError(RsiuError, ValueError):
    """A parameter lies outside its admissible set."""


class NumericalError(RsiuError, ArithmeticError):
    """A numerical routine failed to converge or produced a non-finite value."""


class WarmupError(RsiuError, ValueError):
    """A confidence bound was requested during the warm-up stages."""


class InsufficientPilotError(RsiuError, ValueError):
    """Too few pilot samples to estimate a plug-in constant."""


class TieError(RsiuError, ValueError):
    """A zero performance gap makes the allocation rule undefined."""


class InfeasibleBudgetError(RsiuError, ValueError):
    """The budget cannot cover the requested allocation."""


class ConfigError(RsiuError, ValueError):
    """An experiment configuration is malformed or references unknown names."""


class StreamExhaustedError(RsiuError):
    """A finite data source ran out of samples.

    Attributes:
        partial: Whatever state the caller had accumulated when the stream ran dry
            (for the fixed-confidence loop this is the ``SelectionResult`` so far).
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
