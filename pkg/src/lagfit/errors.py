"""Exception types raised across the package."""


class LagfitError(Exception):
    """Base class for all package errors."""


class InvalidPattern(LagfitError, ValueError):
    pass


class DegenerateConfiguration(LagfitError):
    """Cell clipping hit a configuration the tolerance policy cannot resolve."""


class EmptyCell(LagfitError):
    pass


class NonFiniteValue(LagfitError, ArithmeticError):
    pass


class NewtonDivergence(LagfitError, ArithmeticError):
    pass


class Infeasible(LagfitError):
    """Some Laguerre cell is empty, so the radii density vanishes."""


class InfeasibleInitial(Infeasible):
    pass


class QuadratureAllInfeasible(LagfitError):
    pass


class BandwidthNonpositive(LagfitError, ValueError):
    pass


class ReplicateCountMismatch(LagfitError, ValueError):
    pass


class TooFewReplicates(LagfitError, ValueError):
    pass


class NoModelAccepted(LagfitError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(LagfitError, ValueError):
    pass


class GridTooCoarse(UserWarning):
    """Summary-function grid has fewer points than recommended."""
